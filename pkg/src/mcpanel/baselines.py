"""Comparison estimators: two-way fixed effects (DID), horizontal and
vertical regressions, their elastic-net versions, and synthetic control
with simplex weights.

Every estimator returns the completed panel: observed cells are passed
through unchanged and missing cells hold the imputed values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .elastic_net import Weights, fit_elastic_net, fit_elastic_net_cv
from .errors import IdentificationError, IllPosedError, InfeasibleError, PanelError
from .panel import ObservationMask, as_panel
from .soft_impute import DESCENT_SLACK, CvConfig, McnnmConfig, check_descent, fit_mcnnm, fit_mcnnm_cv, lambda_max

__all__ = [
    "EnConfig",
    "EstimatorSpec",
    "Estimate",
    "Weights",
    "did_effects",
    "fit_did",
    "fit_horizontal",
    "fit_vertical",
    "fit_hr_en",
    "fit_vt_en",
    "fit_sc_adh",
    "project_simplex",
    "run_estimator",
    "COND_LIMIT",
]

COND_LIMIT = 1e12

Kind = Literal["did", "hr", "vt", "hr_en", "vt_en", "sc_adh", "mc_nnm"]
KINDS = ("did", "hr", "vt", "hr_en", "vt_en", "sc_adh", "mc_nnm")


@dataclass(frozen=True)
class EnConfig:
    """Elastic-net settings; ``lam=None`` selects the penalty by CV."""

    lam: float | None = None
    alpha: float = 0.5
    n_folds: int = 5
    n_lambdas: int = 20

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("elastic-net lam must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and how.

    For ``mc_nnm``, ``lam=None`` means cross-validation, a number fixes
    the penalty and ``lam_scale`` fixes it at ``lam_scale * lambda_max``.
    """

    kind: Kind
    en_config: EnConfig | None = None
    cv: CvConfig | None = None
    lam: float | None = None
    lam_scale: float | None = None
    mcnnm: McnnmConfig = field(default_factory=McnnmConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        needs_en = self.kind in ("hr_en", "vt_en")
        if needs_en and self.en_config is None:
            object.__setattr__(self, "en_config", EnConfig())
        if not needs_en and self.en_config is not None:
            raise ValueError(f"en_config only applies to hr_en and vt_en, not {self.kind}")
        if self.lam is not None and self.lam_scale is not None:
            raise ValueError("give at most one of lam and lam_scale")

    @property
    def name(self) -> str:
        return self.kind.replace("_", "-")


@dataclass
class Estimate:
    """Completed panel plus estimator-specific metadata."""

    completed: np.ndarray
    meta: dict = field(default_factory=dict)


def _prepare(y, mask: ObservationMask) -> np.ndarray:
    y = as_panel(y, allow_nan=True)
    mask.check_shape(y)
    if not np.all(np.isfinite(y[mask.observed])):
        raise PanelError("observed outcomes must be finite")
    return np.where(mask.observed, y, np.nan)


# ---------------------------------------------------------------- DID


def _check_connected(obs: np.ndarray) -> None:
    n, t = obs.shape
    rows, cols = np.nonzero(obs)
    graph = coo_matrix((np.ones(rows.size), (rows, n + cols)), shape=(n + t, n + t))
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp > 1:
        raise IdentificationError(
            "two-way fixed effects are not identified: observed cells do not connect all units and periods"
        )


def did_effects(y, mask: ObservationMask) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares two-way fit ``mu + gamma_i + delta_t`` on observed
    cells, normalized so that both effect vectors sum to zero.

    The unit effects are eliminated and the period effects solve the
    reduced normal equations with the rank-one null direction removed.
    """
    yy = _prepare(y, mask)
    obs = mask.observed
    _check_connected(obs)
    w = obs.astype(float)
    y0 = np.where(obs, yy, 0.0)
    r = w.sum(axis=1)
    c = w.sum(axis=0)
    row_tot = y0.sum(axis=1)
    col_tot = y0.sum(axis=0)
    schur = np.diag(c) - (w.T / r) @ w
    rhs = col_tot - w.T @ (row_tot / r)
    ones = np.ones(c.size)
    b = np.linalg.solve(schur + np.outer(ones, ones), rhs)
    a = (row_tot - w @ b) / r
    mu = a.mean() + b.mean()
    return float(mu), a - a.mean(), b - b.mean()


def fit_did(y, mask: ObservationMask) -> np.ndarray:
    """Two-way fixed-effects imputation of the missing cells."""
    mu, gamma, delta = did_effects(y, mask)
    fitted = mu + gamma[:, None] + delta[None, :]
    return np.where(mask.observed, _prepare(y, mask), fitted)


# ---------------------------------------------------------------- OLS


def _ols(design: np.ndarray, target: np.ndarray, pred_design: np.ndarray, hint: str) -> np.ndarray:
    """OLS with intercept fitted on (design, target), evaluated at
    ``pred_design``. ``target`` may hold several columns.

    Inputs are copied to C order so that a problem and its transpose run
    bit-identical arithmetic.
    """
    design = np.ascontiguousarray(design)
    target = np.ascontiguousarray(target)
    pred_design = np.ascontiguousarray(pred_design)
    n, p = design.shape
    x = np.column_stack([np.ones(n), design])
    if n <= p:
        raise IllPosedError(f"{n} training observations for {p} regressors plus intercept: singular, use {hint}")
    cond = np.linalg.cond(x)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllPosedError(f"regression design is collinear (condition number {cond:.3g}); use {hint}")
    coef, *_ = np.linalg.lstsq(x, target, rcond=None)
    return coef[0] + pred_design @ coef[1:]


def _block(mask: ObservationMask, name: str) -> tuple[np.ndarray, np.ndarray]:
    blk = mask.missing_block()
    if blk is None:
        raise InfeasibleError(
            f"{name} requires block missingness: the missing cells must be a set of units missing a common set of periods"
        )
    return blk


def fit_horizontal(y, mask: ObservationMask) -> np.ndarray:
    """Regress each missing period on the observed periods across the
    untreated units, then predict the treated units.

    Raises
    ------
    InfeasibleError
        If the missing cells are not a units-by-periods block.
    IllPosedError
        If there are too few untreated units or the lagged outcomes are
        collinear.
    """
    yy = _prepare(y, mask)
    rows, cols = _block(mask, "hr")
    train = np.setdiff1d(np.arange(mask.n_units), rows)
    feats = np.setdiff1d(np.arange(mask.n_periods), cols)
    if feats.size == 0:
        raise InfeasibleError("hr needs at least one period observed for every unit")
    pred = _ols(yy[np.ix_(train, feats)], yy[np.ix_(train, cols)], yy[np.ix_(rows, feats)], "hr_en")
    out = yy.copy()
    out[np.ix_(rows, cols)] = pred
    return out


def fit_vertical(y, mask: ObservationMask) -> np.ndarray:
    """Regress each treated unit's observed periods on the untreated
    units' outcomes in the same periods, then predict its missing periods.

    Raises
    ------
    InfeasibleError
        If the missing cells are not a units-by-periods block.
    IllPosedError
        If there are too few untreated periods or the control series are
        collinear.
    """
    yy = _prepare(y, mask)
    rows, cols = _block(mask, "vt")
    donors = np.setdiff1d(np.arange(mask.n_units), rows)
    pre = np.setdiff1d(np.arange(mask.n_periods), cols)
    if donors.size == 0:
        raise InfeasibleError("vt needs at least one fully observed unit")
    pred = _ols(yy[np.ix_(donors, pre)].T, yy[np.ix_(rows, pre)].T, yy[np.ix_(donors, cols)].T, "vt_en")
    out = yy.copy()
    out[np.ix_(rows, cols)] = pred.T
    return out


# ---------------------------------------------------------------- elastic net


def _enet(design, target, cfg: EnConfig, seed: int) -> Weights:
    if cfg.lam is None:
        return fit_elastic_net_cv(design, target, cfg.alpha, n_lambdas=cfg.n_lambdas, n_folds=cfg.n_folds, seed=seed)
    return fit_elastic_net(design, target, cfg.lam, cfg.alpha, tol=1e-8, max_sweeps=20_000)


def fit_hr_en(y, mask: ObservationMask, en_config: EnConfig | None = None, *, seed: int = 0) -> np.ndarray:
    """Elastic-net horizontal regression for any missingness pattern.

    Missing cells in column ``c`` are grouped by the set ``S`` of columns
    their unit observes. For each group the outcome in ``c`` is regressed
    on the outcomes in ``S`` over the units observed on ``S`` and ``c``.
    Under a block mask this is one regression per treated period.
    """
    cfg = en_config or EnConfig()
    yy = _prepare(y, mask)
    obs = mask.observed
    out = yy.copy()
    for c in np.flatnonzero(mask.missing.any(axis=0)):
        groups: dict[bytes, list[int]] = {}
        for i in np.flatnonzero(~obs[:, c]):
            groups.setdefault(obs[i].tobytes(), []).append(int(i))
        for key, members in groups.items():
            feats = np.flatnonzero(np.frombuffer(key, dtype=bool))
            if feats.size == 0:
                raise InfeasibleError(f"hr_en: unit {members[0]} has no observed periods")
            train = np.flatnonzero(obs[:, feats].all(axis=1) & obs[:, c])
            if train.size == 0:
                raise InfeasibleError(f"hr_en: no units observed in period {c} and in the periods observed by unit {members[0]}")
            wts = _enet(yy[np.ix_(train, feats)], yy[train, c], cfg, seed)
            out[members, c] = wts.predict(yy[np.ix_(members, feats)])
    return out


def _donors(obs: np.ndarray, i: int, support: np.ndarray) -> np.ndarray:
    ok = obs[:, support].all(axis=1)
    ok[i] = False
    return np.flatnonzero(ok)


def fit_vt_en(y, mask: ObservationMask, en_config: EnConfig | None = None, *, seed: int = 0) -> np.ndarray:
    """Elastic-net vertical regression, one fit per unit with missing
    cells. Donors are the other units observed over all periods the unit
    observes or misses; the regression runs across its observed periods."""
    cfg = en_config or EnConfig()
    yy = _prepare(y, mask)
    obs = mask.observed
    out = yy.copy()
    for i in np.flatnonzero(mask.missing.any(axis=1)):
        pre = np.flatnonzero(obs[i])
        post = np.flatnonzero(~obs[i])
        if pre.size == 0:
            raise InfeasibleError(f"vt_en: unit {i} has no observed periods")
        donors = _donors(obs, i, np.concatenate([pre, post]))
        if donors.size == 0:
            raise InfeasibleError(f"vt_en: no fully observed donor units for unit {i}")
        wts = _enet(yy[np.ix_(donors, pre)].T, yy[i, pre], cfg, seed)
        out[i, post] = wts.predict(yy[np.ix_(donors, post)].T)
    return out


# ---------------------------------------------------------------- synthetic control


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _simplex_ls(x: np.ndarray, y: np.ndarray, max_iter: int = 10_000, rtol: float = 1e-10):
    """Minimize ``||y - x g||^2`` over the simplex by projected gradient
    with step ``1/L``, ``L = 2 sigma_1(x)^2``. Returns (g, trace)."""
    k = x.shape[1]
    g = np.full(k, 1.0 / k)
    if k == 1:
        r = y - x[:, 0]
        return g, np.array([float(r @ r)])
    lip = 2.0 * float(np.linalg.norm(x, 2)) ** 2
    r = y - x @ g
    trace = [float(r @ r)]
    if lip == 0.0:
        return g, np.asarray(trace)
    for _ in range(max_iter):
        g = project_simplex(g + (2.0 / lip) * (x.T @ r))
        r = y - x @ g
        f = float(r @ r)
        prev = trace[-1]
        trace.append(f)
        if prev - f <= rtol * max(prev, 1e-300):
            break
    return g, np.asarray(trace)


def fit_sc_adh(y, mask: ObservationMask) -> tuple[dict[int, Weights], np.ndarray]:
    """Synthetic control with nonnegative donor weights summing to one and
    no intercept, fitted separately for every unit with missing cells.

    Returns
    -------
    weights : dict
        Unit index to its :class:`Weights`. Coefficients are ordered like
        the donor units, which are the other units observed in every
        period, in ascending index order.
    completed : ndarray
    """
    yy = _prepare(y, mask)
    obs = mask.observed
    out = yy.copy()
    weights: dict[int, Weights] = {}
    for i in np.flatnonzero(mask.missing.any(axis=1)):
        pre = np.flatnonzero(obs[i])
        post = np.flatnonzero(~obs[i])
        if pre.size == 0:
            raise InfeasibleError(f"sc_adh: unit {i} has no pre-treatment periods")
        donors = _donors(obs, i, np.concatenate([pre, post]))
        if donors.size == 0:
            raise InfeasibleError(f"sc_adh: no fully observed control units for unit {i}")
        g, trace = _simplex_ls(yy[np.ix_(donors, pre)].T, yy[i, pre])
        check_descent(trace, DESCENT_SLACK * max(1.0, trace[0]))
        weights[int(i)] = Weights(g, 0.0, n_sweeps=trace.size - 1)
        out[i, post] = yy[np.ix_(donors, post)].T @ g
    return weights, out


# ---------------------------------------------------------------- dispatch


def run_estimator(y, mask: ObservationMask, spec: EstimatorSpec, *, seed: int = 0, workers: int = 1) -> Estimate:
    """Run one estimator and return the completed panel with metadata."""
    if spec.kind == "did":
        return Estimate(fit_did(y, mask))
    if spec.kind == "hr":
        return Estimate(fit_horizontal(y, mask))
    if spec.kind == "vt":
        return Estimate(fit_vertical(y, mask))
    if spec.kind == "hr_en":
        return Estimate(fit_hr_en(y, mask, spec.en_config, seed=seed))
    if spec.kind == "vt_en":
        return Estimate(fit_vt_en(y, mask, spec.en_config, seed=seed))
    if spec.kind == "sc_adh":
        weights, completed = fit_sc_adh(y, mask)
        return Estimate(completed, {"weights": {i: w.coefficients.tolist() for i, w in weights.items()}})
    # mc_nnm
    yy = _prepare(y, mask)
    meta: dict = {}
    if spec.lam is None and spec.lam_scale is None:
        # folds always follow the run seed so replications differ
        cv = replace(spec.cv, seed=seed) if spec.cv else CvConfig(seed=seed)
        fit, cvr = fit_mcnnm_cv(yy, mask, cv, spec.mcnnm, workers=workers)
        meta["cv_mse"] = float(cvr.mean_mse.min())
    else:
        lam = spec.lam if spec.lam is not None else spec.lam_scale * lambda_max(yy, mask)
        fit = fit_mcnnm(yy, mask, spec.mcnnm, lam=lam)
    meta.update(lam=fit.lam, effective_rank=fit.effective_rank, n_iter=fit.n_iter, converged=fit.converged)
    return Estimate(np.where(mask.observed, yy, fit.estimate), meta)
