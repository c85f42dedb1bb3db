"""Extensions of MC-NNM: covariates and fixed effects, propensity
weighting, and serially correlated (AR(1)) errors.

The covariate model fits::

    Y_it ~ L_it + sum_pq X_ip H_pq Z_tq + mu + gamma_i + delta_t + V_it . beta

by minimizing ``(1/|O|) ||P_O(Y - Yhat)||_F^2 + lam_l ||L||_* + lam_h ||H||_1``
with block coordinate descent. The weighted and AR(1) variants replace the
squared loss and are solved by proximal gradient; with unit weights or
``rho = 0`` both reduce exactly to the soft-impute iteration.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .baselines import did_effects
from .errors import EmptyMaskError, PanelError
from .panel import ObservationMask, as_panel
from .soft_impute import (
    CvConfig,
    CvResult,
    FitResult,
    McnnmConfig,
    _draw_folds,
    _effective_rank,
    _shrink_svd,
    check_descent,
    cv_subset_size,
    default_lambda_grid,
    fit_mcnnm,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CovariateSet",
    "CovariateFit",
    "ArSpec",
    "PropensityModel",
    "ar1_covariance",
    "ar1_inverse",
    "fit_covariate_model",
    "h_gradient",
    "estimate_propensity",
    "fit_weighted",
    "fit_weighted_cv",
    "weighted_lambda_max",
    "weighted_objective",
    "fit_ar1",
    "ar1_objective",
    "estimate_rho",
]


# ---------------------------------------------------------------- covariates


@dataclass(frozen=True)
class CovariateSet:
    """Unit covariates ``x`` (N, P), period covariates ``z`` (T, Q) and
    unit-period covariates ``v`` (N, T, J). Any of them may be None.

    The interaction term ``X H Z^T`` is used only when both ``x`` and
    ``z`` are given.
    """

    x: np.ndarray | None = None
    z: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        for name, ndim in (("x", 2), ("z", 2), ("v", 3)):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.asarray(a, dtype=float)
            if a.ndim != ndim:
                raise PanelError(f"covariate {name} must be {ndim}-dimensional, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise PanelError(f"covariate {name} has non-finite entries")
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def check(self, shape: tuple[int, int]) -> None:
        n, t = shape
        if self.x is not None and self.x.shape[0] != n:
            raise PanelError(f"x has {self.x.shape[0]} rows for {n} units")
        if self.z is not None and self.z.shape[0] != t:
            raise PanelError(f"z has {self.z.shape[0]} rows for {t} periods")
        if self.v is not None and self.v.shape[:2] != (n, t):
            raise PanelError(f"v has leading shape {self.v.shape[:2]} for a {n}x{t} panel")

    @property
    def has_interaction(self) -> bool:
        return self.x is not None and self.z is not None


@dataclass
class CovariateFit:
    l_hat: np.ndarray
    h_hat: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    mu: float
    lambda_l: float
    lambda_h: float
    objective_trace: np.ndarray
    n_iter: int
    converged: bool
    effective_rank: int

    def __post_init__(self):
        check_descent(self.objective_trace)

    def fitted(self, cov: CovariateSet | None = None) -> np.ndarray:
        """Reconstruct the fitted panel from all components."""
        cov = cov or CovariateSet()
        out = self.l_hat + self.mu + self.gamma[:, None] + self.delta[None, :]
        if cov.has_interaction:
            out = out + cov.x @ self.h_hat @ cov.z.T
        if cov.v is not None:
            out = out + cov.v @ self.beta
        return out


def _independent_columns(design: np.ndarray) -> np.ndarray:
    """Indices of a maximal set of linearly independent columns, chosen
    greedily from the left."""
    keep: list[int] = []
    for j in range(design.shape[1]):
        trial = design[:, keep + [j]]
        if np.linalg.matrix_rank(trial) == len(keep) + 1:
            keep.append(j)
    return np.asarray(keep, dtype=int)


def _effects(resid, mask, unit_effects, time_effects):
    """Least-squares (mu, gamma, delta) for the residual on observed cells."""
    n, t = mask.shape
    obs = mask.observed
    if unit_effects and time_effects:
        return did_effects(resid, mask)
    gamma = np.zeros(n)
    delta = np.zeros(t)
    r0 = np.where(obs, resid, 0.0)
    if unit_effects:
        cnt = obs.sum(axis=1)
        means = np.divide(r0.sum(axis=1), cnt, out=np.zeros(n), where=cnt > 0)
        mu = float(means[cnt > 0].mean())
        gamma = np.where(cnt > 0, means - mu, 0.0)
        return mu, gamma, delta
    cnt = obs.sum(axis=0)
    means = np.divide(r0.sum(axis=0), cnt, out=np.zeros(t), where=cnt > 0)
    mu = float(means[cnt > 0].mean())
    delta = np.where(cnt > 0, means - mu, 0.0)
    return mu, gamma, delta


def h_gradient(y, mask: ObservationMask, cov: CovariateSet, fit: CovariateFit) -> np.ndarray:
    """Gradient of ``(1/2) ||P_O(Y - Yhat)||_F^2`` with respect to ``H``.

    At a solution each entry satisfies ``|g| <= lam_h |O| / 2`` where
    ``H`` is zero and ``g = -lam_h |O| / 2 * sign(H)`` elsewhere.
    """
    y = np.where(mask.observed, as_panel(y, allow_nan=True), 0.0)
    resid = np.where(mask.observed, y - fit.fitted(cov), 0.0)
    return -(cov.x.T @ resid @ cov.z)


def fit_covariate_model(
    y,
    mask: ObservationMask,
    cov: CovariateSet | None = None,
    lambda_l: float = 0.0,
    lambda_h: float = 0.0,
    config: McnnmConfig | None = None,
    *,
    unit_effects: bool = True,
    time_effects: bool = True,
) -> CovariateFit:
    """Block coordinate descent for the covariate model.

    Each cycle updates, in order, the fixed effects (exact least squares),
    ``beta`` (least squares), each entry of ``H`` (exact soft-threshold
    update) and ``L`` (one soft-impute step with threshold
    ``lambda_l |O| / 2``). Every update minimizes the joint objective or a
    majorizer of it, so the objective never increases. Iteration stops
    when the relative change in the fitted panel falls below
    ``config.tol``; with no covariates and no effects this is exactly
    :func:`~mcpanel.soft_impute.fit_mcnnm`.

    Fixed effects are normalized to sum to zero, with the grand mean in
    ``mu``; the intercept is fitted only when some effect is enabled.
    Collinear columns of ``v`` are dropped (their ``beta`` is 0) with a
    warning.
    """
    config = config or McnnmConfig()
    cov = cov or CovariateSet()
    if lambda_l < 0 or lambda_h < 0:
        raise ValueError("penalties must be nonnegative")
    if mask.n_observed == 0:
        raise EmptyMaskError("cannot fit with no observed cells")
    yy = as_panel(y, allow_nan=True)
    mask.check_shape(yy)
    cov.check(mask.shape)
    obs = mask.observed
    if not np.all(np.isfinite(yy[obs])):
        raise PanelError("outcomes must be finite on observed cells")
    py = np.where(obs, yy, 0.0)
    n, t = mask.shape
    n_obs = mask.n_observed
    use_effects = unit_effects or time_effects

    # fixed parts of the design
    if cov.v is not None:
        j_all = cov.v.shape[2]
        vdesign = cov.v[obs]
        keep = _independent_columns(vdesign)
        if keep.size < j_all:
            warnings.warn(
                f"dropping {j_all - keep.size} collinear unit-period covariate(s)", RuntimeWarning, stacklevel=2
            )
        vkeep = vdesign[:, keep]
    else:
        j_all = 0
        keep = np.zeros(0, dtype=int)
    if cov.has_interaction:
        p, q = cov.x.shape[1], cov.z.shape[1]
        feats = np.einsum("ip,tq->pqit", cov.x, cov.z) * obs
        f_sq = np.einsum("pqit,pqit->pq", feats, feats)
    else:
        p = q = 0

    l = np.zeros((n, t))
    h = np.zeros((p, q))
    beta = np.zeros(j_all)
    mu, gamma, delta = 0.0, np.zeros(n), np.zeros(t)
    xhz = np.zeros((n, t))
    vb = np.zeros((n, t))
    nuc = 0.0

    def current_fit():
        return l + mu + gamma[:, None] + delta[None, :] + xhz + vb

    def obj(fitted):
        r = np.where(obs, py - fitted, 0.0)
        return float(np.sum(r * r)) / n_obs + lambda_l * nuc + lambda_h * float(np.abs(h).sum())

    fitted = current_fit()
    trace = [obj(fitted)]
    s = np.zeros(min(n, t))
    converged = False
    n_iter = 0
    thr_h = lambda_h * n_obs / 2.0
    for n_iter in range(1, config.max_iter + 1):
        previous = fitted
        if use_effects:
            mu, gamma, delta = _effects(py - l - xhz - vb, mask, unit_effects, time_effects)
        effects = mu + gamma[:, None] + delta[None, :]
        if keep.size:
            target = (py - l - xhz - effects)[obs]
            coef, *_ = np.linalg.lstsq(vkeep, target, rcond=None)
            beta = np.zeros(j_all)
            beta[keep] = coef
            vb = cov.v @ beta
        if p and q:
            resid = np.where(obs, py - l - effects - vb - xhz, 0.0)
            for a in range(p):
                for b in range(q):
                    if f_sq[a, b] == 0.0:
                        continue
                    f = feats[a, b]
                    old = h[a, b]
                    c = float(np.sum(f * resid)) + old * f_sq[a, b]
                    new = np.sign(c) * max(abs(c) - thr_h, 0.0) / f_sq[a, b]
                    if new != old:
                        resid -= (new - old) * f
                        h[a, b] = new
            xhz = cov.x @ h @ cov.z.T
        target = py - effects - vb - xhz
        l, s = _shrink_svd(np.where(obs, target, l), lambda_l * n_obs / 2.0)
        nuc = float(s.sum())
        fitted = current_fit()
        trace.append(obj(fitted))
        change = np.linalg.norm(fitted - previous) / max(1.0, np.linalg.norm(previous))
        if change < config.tol:
            converged = True
            break
    if not converged:
        logger.debug("covariate model stopped at max_iter=%d", config.max_iter)
    return CovariateFit(
        l, h, gamma, delta, beta, float(mu), float(lambda_l), float(lambda_h),
        np.asarray(trace), n_iter, converged, _effective_rank(s),
    )


# ---------------------------------------------------------------- propensity weighting


@dataclass(frozen=True)
class PropensityModel:
    e_hat: np.ndarray
    clip_bounds: tuple[float, float] = (0.01, 0.99)

    def __post_init__(self):
        lo, hi = self.clip_bounds
        if not (0.0 < lo <= 0.5 <= hi < 1.0):
            raise ValueError("clip_bounds must satisfy 0 < low <= 0.5 <= high < 1")
        e = np.clip(np.asarray(self.e_hat, dtype=float), lo, hi)
        e.flags.writeable = False
        object.__setattr__(self, "e_hat", e)

    @property
    def weights(self) -> np.ndarray:
        """Odds ``e / (1 - e)``."""
        return self.e_hat / (1.0 - self.e_hat)


def estimate_propensity(w, lam: float, clip_bounds: tuple[float, float] = (0.01, 0.99)) -> PropensityModel:
    """Low-rank propensity estimate from the treatment indicator matrix.

    The fully observed MC-NNM fit of ``W`` at penalty ``lam`` is
    ``shrink_{lam N T / 2}(W)``; it is clipped to ``clip_bounds``.
    """
    w = as_panel(w)
    if not np.all((w == 0) | (w == 1)):
        raise PanelError("treatment matrix must be 0/1")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    e, _ = _shrink_svd(w, lam * w.size / 2.0)
    return PropensityModel(e, clip_bounds)


def weighted_objective(y, mask: ObservationMask, weights, l, lam: float) -> float:
    r = np.where(mask.observed, np.nan_to_num(np.asarray(y, dtype=float)) - l, 0.0)
    return float(np.sum(weights * r * r)) / mask.n_observed + lam * float(np.linalg.svd(l, compute_uv=False).sum())


def weighted_lambda_max(y, mask: ObservationMask, prop: PropensityModel) -> float:
    """Smallest penalty with a zero weighted fit,
    ``2 sigma_1(P_O(w * Y)) / |O|``."""
    py = np.where(mask.observed, np.nan_to_num(np.asarray(y, dtype=float)), 0.0)
    return 2.0 * float(np.linalg.norm(prop.weights * py, 2)) / mask.n_observed


def _prox_gradient(py, obs, n_obs, lam, tol, max_iter, step_fn, step_size, data_obj, init=None):
    """Proximal gradient for ``data_obj(L) + lam ||L||_*`` from ``L = 0``.

    ``step_fn(L)`` returns the negative gradient times ``step_size``. From
    zero, the first iterate equals the first soft-impute iterate when the
    loss is the plain squared error."""
    current = np.zeros_like(py) if init is None else np.array(init, dtype=float)
    nuc = float(np.linalg.svd(current, compute_uv=False).sum())
    trace = [data_obj(current) + lam * nuc]
    s = np.zeros(min(py.shape))
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        nxt, s = _shrink_svd(current + step_fn(current), lam * step_size)
        trace.append(data_obj(nxt) + lam * float(s.sum()))
        change = np.linalg.norm(nxt - current) / max(1.0, np.linalg.norm(current))
        current = nxt
        if change < tol:
            converged = True
            break
    return current, s, np.asarray(trace), n_iter, converged


def _observed(y, mask):
    yy = as_panel(y, allow_nan=True)
    mask.check_shape(yy)
    if mask.n_observed == 0:
        raise EmptyMaskError("cannot fit with no observed cells")
    if not np.all(np.isfinite(yy[mask.observed])):
        raise PanelError("outcomes must be finite on observed cells")
    return np.where(mask.observed, yy, 0.0)


def fit_weighted(y, mask: ObservationMask, prop: PropensityModel, lambda_l: float, config: McnnmConfig | None = None, *, init=None) -> FitResult:
    """Propensity-weighted MC-NNM.

    Minimizes ``(1/|O|) sum_O w_it (Y_it - L_it)^2 + lambda_l ||L||_*``
    with ``w = e / (1 - e)`` by proximal gradient with step
    ``|O| / (2 max w)``. With constant weights 1 the iteration is
    soft-impute.
    """
    config = config or McnnmConfig()
    py = _observed(y, mask)
    obs = mask.observed
    n_obs = mask.n_observed
    w = prop.weights
    mask.check_shape(w)
    w_max = float(w[obs].max())
    scaled = np.where(obs, w / w_max, 0.0)

    def step(l):
        return scaled * (py - l)

    def data(l):
        r = np.where(obs, py - l, 0.0)
        return float(np.sum(w * r * r)) / n_obs

    est, s, trace, n_iter, conv = _prox_gradient(
        py, obs, n_obs, lambda_l, config.tol, config.max_iter, step, n_obs / (2.0 * w_max), data, init
    )
    return FitResult(est, _effective_rank(s), trace, n_iter, conv, float(lambda_l))


def fit_weighted_cv(
    y, mask: ObservationMask, prop: PropensityModel, cv: CvConfig | None = None, config: McnnmConfig | None = None
) -> tuple[FitResult, CvResult]:
    """Weighted fit with the penalty chosen by cross-validation.

    Folds are drawn as for :func:`~mcpanel.soft_impute.cross_validate`;
    the holdout score is the weighted squared error, so the selection
    criterion matches the weighted loss.
    """
    cv = cv or CvConfig()
    config = config or McnnmConfig()
    py = _observed(y, mask)
    folds = _draw_folds(mask, cv.n_folds, cv.seed)
    w = prop.weights
    if cv.lambda_grid is not None:
        grid = cv.lambda_grid
    else:
        top = max([weighted_lambda_max(py, mask, prop)] + [weighted_lambda_max(py, ObservationMask(f), prop) for f in folds])
        grid = default_lambda_grid(py, mask, top=top)
    fold_mse = np.empty((len(folds), len(grid)))
    for k, train in enumerate(folds):
        tmask = ObservationMask(train)
        holdout = mask.observed & ~train
        fit = None
        for j, lam in enumerate(grid):
            fit = fit_weighted(py, tmask, prop, lam, config, init=None if fit is None else fit.estimate)
            d = (py - fit.estimate)[holdout]
            fold_mse[k, j] = float(np.mean(w[holdout] * d * d))
    mean_mse = fold_mse.mean(axis=0)
    j = int(np.flatnonzero(mean_mse == mean_mse.min())[-1])
    result = CvResult(float(grid[j]), np.asarray(grid), mean_mse, fold_mse, cv_subset_size(mask.n_observed, *mask.shape))
    fit = None
    for lam in grid[: j + 1]:
        fit = fit_weighted(py, mask, prop, float(lam), config, init=None if fit is None else fit.estimate)
    return fit, result


# ---------------------------------------------------------------- AR(1) errors


@dataclass(frozen=True)
class ArSpec:
    """AR(1) error model; ``rho=None`` means estimate it from the data.
    An explicit ``omega`` overrides the AR(1) form."""

    rho: float | None = None
    omega: np.ndarray | None = None

    def __post_init__(self):
        if self.rho is not None and not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie strictly between -1 and 1")
        if self.omega is not None:
            om = np.asarray(self.omega, dtype=float)
            if om.ndim != 2 or om.shape[0] != om.shape[1] or not np.allclose(om, om.T):
                raise ValueError("omega must be a symmetric square matrix")
            try:
                np.linalg.cholesky(om)
            except np.linalg.LinAlgError:
                raise ValueError("omega must be positive definite") from None
            object.__setattr__(self, "omega", om)

    def precision(self, n_periods: int, rho: float | None = None) -> np.ndarray:
        """Inverse covariance over ``n_periods``."""
        if self.omega is not None:
            if self.omega.shape[0] != n_periods:
                raise ValueError(f"omega is {self.omega.shape[0]}x{self.omega.shape[0]} for {n_periods} periods")
            return np.linalg.inv(self.omega)
        rho = self.rho if rho is None else rho
        if rho is None:
            raise ValueError("rho is unknown; estimate it first")
        return ar1_inverse(rho, n_periods)


def ar1_covariance(rho: float, n_periods: int) -> np.ndarray:
    idx = np.arange(n_periods)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def ar1_inverse(rho: float, n_periods: int) -> np.ndarray:
    """Closed-form tridiagonal inverse of the AR(1) correlation matrix."""
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie strictly between -1 and 1")
    diag = np.full(n_periods, 1.0 + rho * rho)
    diag[0] = diag[-1] = 1.0
    if n_periods == 1:
        diag[0] = 1.0 - rho * rho
    out = np.diag(diag) - rho * (np.eye(n_periods, k=1) + np.eye(n_periods, k=-1))
    return out / (1.0 - rho * rho)


def ar1_objective(y, mask: ObservationMask, precision, l, lam: float) -> float:
    r = np.where(mask.observed, np.nan_to_num(np.asarray(y, dtype=float)) - l, 0.0)
    return float(np.sum((r @ precision) * r)) / mask.n_observed + lam * float(np.linalg.svd(l, compute_uv=False).sum())


def estimate_rho(y, mask: ObservationMask, lam: float, config: McnnmConfig | None = None) -> float:
    """Lag-1 autocorrelation of residuals from a preliminary MC-NNM fit.

    The fit at ``lam`` fixes a rank ``k``; residuals are taken against the
    rank-``k`` truncated SVD of the completed panel, which removes the
    singular-value shrinkage that would otherwise leak into the residuals.
    Pairs of consecutive observed periods are used; the estimate is
    clipped to [-0.99, 0.99].
    """
    fit = fit_mcnnm(y, mask, config, lam=lam)
    py = _observed(y, mask)
    filled = np.where(mask.observed, py, fit.estimate)
    u, sv, vt = np.linalg.svd(filled, full_matrices=False)
    k = fit.effective_rank
    r = np.where(mask.observed, py - (u[:, :k] * sv[:k]) @ vt[:k], 0.0)
    both = mask.observed[:, 1:] & mask.observed[:, :-1]
    num = float(np.sum((r[:, 1:] * r[:, :-1])[both]))
    den = float(np.sum(r[mask.observed] ** 2))
    if den == 0.0:
        return 0.0
    return float(np.clip(num / den, -0.99, 0.99))


def fit_ar1(y, mask: ObservationMask, ar: ArSpec, lambda_l: float, config: McnnmConfig | None = None, *, init=None) -> FitResult:
    """MC-NNM with AR(1)-correlated errors within each unit.

    Minimizes ``(1/|O|) sum_i r_i^T Omega^{-1} r_i + lambda_l ||L||_*``
    where ``r_i`` is row ``i`` of ``P_O(Y - L)``, by proximal gradient
    with step ``|O| / (2 sigma_max(Omega^{-1}))``.
    """
    config = config or McnnmConfig()
    py = _observed(y, mask)
    obs = mask.observed
    n_obs = mask.n_observed
    rho = ar.rho
    if ar.omega is None and rho is None:
        rho = estimate_rho(y, mask, lambda_l, config)
        logger.debug("estimated rho = %.4f", rho)
    prec = ar.precision(mask.n_periods, rho)
    s_max = float(np.linalg.eigvalsh(prec)[-1])

    def step(l):
        r = np.where(obs, py - l, 0.0)
        return np.where(obs, r @ prec, 0.0) / s_max

    def data(l):
        r = np.where(obs, py - l, 0.0)
        return float(np.sum((r @ prec) * r)) / n_obs

    est, s, trace, n_iter, conv = _prox_gradient(
        py, obs, n_obs, lambda_l, config.tol, config.max_iter, step, n_obs / (2.0 * s_max), data, init
    )
    return FitResult(est, _effective_rank(s), trace, n_iter, conv, float(lambda_l))
