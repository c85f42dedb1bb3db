"""MC-NNM: nuclear-norm penalized matrix completion via soft-impute.

The estimator minimizes::

    (1/|O|) * ||P_O(Y - L)||_F^2 + lam * ||L||_*

by iterating ``L <- shrink_{lam*|O|/2}(P_O(Y) + P_O^perp(L))`` from
``L = P_O(Y)``. Each step is a majorize-minimize step, so the objective
never increases; every fit records it in ``FitResult.objective_trace``.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMaskError, ObjectiveIncreaseWarning, PanelError
from .panel import RANK_RTOL, ObservationMask, as_panel

logger = logging.getLogger(__name__)

__all__ = [
    "SvdTriple",
    "McnnmConfig",
    "FitResult",
    "CvConfig",
    "CvResult",
    "FactorPair",
    "svd_triple",
    "shrink",
    "objective",
    "fit_mcnnm",
    "lambda_max",
    "default_lambda_grid",
    "cv_subset_size",
    "cross_validate",
    "fit_mcnnm_cv",
    "factorize",
    "check_descent",
]

DESCENT_SLACK = 1e-10


@dataclass(frozen=True)
class SvdTriple:
    """Thin SVD ``left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def svd_triple(a) -> SvdTriple:
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    return SvdTriple(u, s, vt.T)


@dataclass(frozen=True)
class McnnmConfig:
    """Solver settings for a single MC-NNM fit.

    ``lam`` is the penalty on the nuclear norm. ``clip_max``, when set,
    clamps the final estimate to ``[-clip_max, clip_max]`` (the bounded
    max-norm variant of the estimator).
    """

    lam: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    clip_max: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.clip_max is not None and self.clip_max <= 0:
            raise ValueError("clip_max must be positive")


@dataclass
class FitResult:
    estimate: np.ndarray
    effective_rank: int
    objective_trace: np.ndarray
    n_iter: int
    converged: bool
    lam: float

    def __post_init__(self):
        check_descent(self.objective_trace)


@dataclass(frozen=True)
class CvConfig:
    """Cross-validation settings.

    ``lambda_grid=None`` means the default data-driven grid (see
    :func:`default_lambda_grid`) with ``n_points``, ``ratio`` and
    ``include_zero``; these three are ignored when a grid is given.
    """

    n_folds: int = 5
    lambda_grid: tuple[float, ...] | None = None
    seed: int = 0
    n_points: int = 30
    ratio: float = 1e-4
    include_zero: bool = True

    def __post_init__(self):
        if self.n_folds < 1:
            raise ValueError("n_folds must be positive")
        if self.n_points < 1 or not 0.0 < self.ratio <= 1.0:
            raise ValueError("n_points must be positive and ratio in (0, 1]")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0:
                raise ValueError("lambda_grid must be a nonempty sequence")
            if np.any(grid < 0) or np.any(np.diff(grid) >= 0):
                raise ValueError("lambda_grid must be strictly descending and nonnegative")
            object.__setattr__(self, "lambda_grid", tuple(float(x) for x in grid))


@dataclass
class CvResult:
    lam: float
    lambdas: np.ndarray
    mean_mse: np.ndarray
    fold_mse: np.ndarray = field(repr=False)
    subset_size: int = 0


@dataclass(frozen=True)
class FactorPair:
    """``a @ b.T`` factorization with balanced factors."""

    a: np.ndarray
    b: np.ndarray

    @property
    def rank(self) -> int:
        return self.a.shape[1]


def check_descent(trace, slack: float = DESCENT_SLACK) -> bool:
    """Warn with :class:`ObjectiveIncreaseWarning` if ``trace`` increases."""
    trace = np.asarray(trace, dtype=float)
    if trace.size < 2:
        return True
    jumps = np.diff(trace)
    if np.any(jumps > slack):
        k = int(np.argmax(jumps))
        warnings.warn(
            f"objective increased by {jumps[k]:.3e} at step {k + 1}",
            ObjectiveIncreaseWarning,
            stacklevel=3,
        )
        return False
    return True


def _effective_rank(s: np.ndarray) -> int:
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > RANK_RTOL * s[0]))


def _shrink_svd(a: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Shrunk matrix and its (descending) shrunk singular values."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    k = int(np.count_nonzero(s > 0))
    if k == 0:
        return np.zeros_like(a), s
    return (u[:, :k] * s[:k]) @ vt[:k], s


def shrink(a, threshold: float) -> np.ndarray:
    """Soft-threshold the singular values of ``a`` by ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    a = as_panel(a)
    return _shrink_svd(a, threshold)[0]


def _observed_data(y, mask: ObservationMask) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    mask.check_shape(y)
    obs = mask.observed
    if not np.all(np.isfinite(y[obs])):
        raise PanelError("outcomes must be finite on observed cells")
    return np.where(obs, y, 0.0)


def objective(y, mask: ObservationMask, l, lam: float, nuclear: float | None = None) -> float:
    """(1/|O|) ||P_O(Y - L)||_F^2 + lam ||L||_*."""
    py = _observed_data(y, mask)
    resid = np.where(mask.observed, py - l, 0.0)
    if nuclear is None:
        nuclear = float(np.linalg.svd(l, compute_uv=False).sum())
    return float(np.sum(resid * resid)) / mask.n_observed + lam * nuclear


def _soft_impute(py, obs, n_obs, lam, tol, max_iter, init):
    """Core iteration on pre-projected data ``py``. Returns
    (estimate, shrunk singular values, trace, n_iter, converged)."""
    threshold = lam * n_obs / 2.0
    if init is None:
        current = py.copy()
    else:
        current = np.array(init, dtype=float, copy=True)
    nuc = float(np.linalg.svd(current, compute_uv=False).sum())
    r = np.where(obs, py - current, 0.0)
    trace = [float(np.sum(r * r)) / n_obs + lam * nuc]
    s = np.zeros(min(py.shape))
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        filled = np.where(obs, py, current)
        nxt, s = _shrink_svd(filled, threshold)
        r = np.where(obs, py - nxt, 0.0)
        trace.append(float(np.sum(r * r)) / n_obs + lam * float(s.sum()))
        change = np.linalg.norm(nxt - current) / max(1.0, np.linalg.norm(current))
        current = nxt
        if change < tol:
            converged = True
            break
    return current, s, np.asarray(trace), n_iter, converged


def fit_mcnnm(y, mask: ObservationMask, config: McnnmConfig | None = None, *, lam: float | None = None, init=None) -> FitResult:
    """Fit MC-NNM at a fixed penalty.

    Parameters
    ----------
    y : array_like, shape (N, T)
        Outcomes; entries outside ``mask`` are ignored and may be NaN.
    mask : ObservationMask
    config : McnnmConfig, optional
    lam : float, optional
        Overrides ``config.lam``.
    init : array_like, optional
        Warm start; defaults to ``P_O(Y)``.

    Returns
    -------
    FitResult
        Non-convergence within ``max_iter`` is reported through
        ``converged=False``, not raised.
    """
    config = config or McnnmConfig()
    if lam is not None:
        config = McnnmConfig(lam=lam, tol=config.tol, max_iter=config.max_iter, clip_max=config.clip_max)
    if mask.n_observed == 0:
        raise EmptyMaskError("cannot fit with no observed cells")
    py = _observed_data(y, mask)
    est, s, trace, n_iter, converged = _soft_impute(
        py, mask.observed, mask.n_observed, config.lam, config.tol, config.max_iter, init
    )
    if not converged:
        logger.debug("soft-impute stopped at max_iter=%d (lam=%g)", config.max_iter, config.lam)
    rank = _effective_rank(s)
    if config.clip_max is not None:
        est = np.clip(est, -config.clip_max, config.clip_max)
    return FitResult(est, rank, trace, n_iter, converged, float(config.lam))


def lambda_max(y, mask: ObservationMask) -> float:
    """Smallest penalty whose MC-NNM solution is the zero matrix,
    ``2 * sigma_1(P_O(Y)) / |O|``."""
    if mask.n_observed == 0:
        raise EmptyMaskError("cannot compute lambda_max with no observed cells")
    py = _observed_data(y, mask)
    s1 = float(np.linalg.norm(py, 2))
    if s1 == 0.0:
        warnings.warn("observed outcomes are all zero; lambda_max is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return 2.0 * s1 / mask.n_observed


def default_lambda_grid(y, mask: ObservationMask, n_points: int = 30, ratio: float = 1e-4, include_zero: bool = True, top: float | None = None) -> tuple[float, ...]:
    """Geometric grid from ``top`` (default ``lambda_max``) down to
    ``ratio * top``, followed by 0."""
    if top is None:
        top = lambda_max(y, mask)
    if top == 0.0:
        return (0.0,)
    grid = list(top * np.geomspace(1.0, ratio, n_points))
    if include_zero:
        grid.append(0.0)
    return tuple(grid)


def cv_subset_size(n_observed: int, n_units: int, n_periods: int) -> int:
    """Size of each training subset: floor(|O|^2 / (N T))."""
    return (n_observed * n_observed) // (n_units * n_periods)


def _draw_folds(mask: ObservationMask, n_folds: int, seed: int) -> list[np.ndarray]:
    n, t = mask.shape
    size = cv_subset_size(mask.n_observed, n, t)
    if mask.n_observed == n * t:
        raise PanelError("panel is fully observed; nothing to hold out for cross-validation")
    if size < 1:
        raise PanelError("cross-validation subset size is zero")
    rng = np.random.default_rng(seed)
    flat = mask.flat_observed
    folds = []
    for _ in range(n_folds):
        keep = np.zeros(n * t, dtype=bool)
        keep[rng.choice(flat, size=size, replace=False)] = True
        folds.append(keep.reshape(n, t))
    return folds


def _fold_lambda_max(py, train) -> float:
    return 2.0 * float(np.linalg.norm(np.where(train, py, 0.0), 2)) / int(train.sum())


def _fold_path(py, obs, train, grid, config):
    """Warm-started sweep down the grid on one training subset; returns the
    holdout MSE per lambda."""
    holdout = obs & ~train
    n_train = int(train.sum())
    py_train = np.where(train, py, 0.0)
    current = None
    errors = np.empty(len(grid))
    for j, lam in enumerate(grid):
        current, _, trace, _, _ = _soft_impute(py_train, train, n_train, lam, config.tol, config.max_iter, current)
        check_descent(trace)
        diff = (current - py)[holdout]
        errors[j] = float(np.mean(diff * diff))
    return errors


def cross_validate(y, mask: ObservationMask, cv: CvConfig | None = None, config: McnnmConfig | None = None, *, workers: int = 1) -> CvResult:
    """Choose the penalty by K-fold subset cross-validation.

    Each fold trains on a uniform random subset of the observed cells of
    size ``floor(|O|^2 / (N T))`` and scores squared error on the rest of
    the observed cells. Along the (descending) grid every fit is warm
    started from the previous solution. Ties go to the smallest penalty.
    The default grid starts at the largest ``lambda_max`` over the full
    data and the training subsets.
    """
    cv = cv or CvConfig()
    config = config or McnnmConfig()
    py = _observed_data(y, mask)
    folds = _draw_folds(mask, cv.n_folds, cv.seed)
    obs = mask.observed
    if cv.lambda_grid is not None:
        grid = cv.lambda_grid
    else:
        # start high enough that every fold's first fit is the zero matrix
        top = max(lambda_max(y, mask), max(_fold_lambda_max(py, f) for f in folds))
        grid = default_lambda_grid(y, mask, cv.n_points, cv.ratio, cv.include_zero, top=top)

    def run(train):
        return _fold_path(py, obs, train, grid, config)

    if workers > 1 and len(folds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fold_mse = np.vstack(list(pool.map(run, folds)))
        # pool.map preserves fold order, so the table is schedule independent
    else:
        fold_mse = np.vstack([run(f) for f in folds])
    mean_mse = fold_mse.mean(axis=0)
    best = np.flatnonzero(mean_mse == mean_mse.min())
    # grid is descending: the last minimizer is the smallest penalty
    j = int(best[-1])
    return CvResult(
        lam=float(grid[j]),
        lambdas=np.asarray(grid),
        mean_mse=mean_mse,
        fold_mse=fold_mse,
        subset_size=cv_subset_size(mask.n_observed, *mask.shape),
    )


def fit_mcnnm_cv(y, mask: ObservationMask, cv: CvConfig | None = None, config: McnnmConfig | None = None, *, workers: int = 1) -> tuple[FitResult, CvResult]:
    """Cross-validate the penalty, then fit on all observed cells.

    The final fit follows the same warm-started path down the grid to the
    chosen penalty, so a selected ``lam = 0`` is the limit of the path
    rather than the unpenalized fit from ``P_O(Y)``.
    """
    config = config or McnnmConfig()
    result = cross_validate(y, mask, cv, config, workers=workers)
    path = [lam for lam in result.lambdas if lam >= result.lam]
    fit = None
    for lam in path:
        fit = fit_mcnnm(y, mask, config, lam=float(lam), init=None if fit is None else fit.estimate)
    return fit, result


def factorize(fit) -> FactorPair:
    """Balanced factors ``A = S sqrt(Sigma)``, ``B = R sqrt(Sigma)``.

    Accepts a :class:`FitResult` (truncated at its effective rank) or a
    matrix (truncated at its numerical rank).
    """
    if isinstance(fit, FitResult):
        est, k = np.asarray(fit.estimate, dtype=float), fit.effective_rank
    else:
        est = as_panel(fit)
        k = None
    u, s, vt = np.linalg.svd(est, full_matrices=False)
    if k is None:
        k = _effective_rank(s)
    k = min(k, _effective_rank(s))
    root = np.sqrt(s[:k])
    return FactorPair(u[:, :k] * root, vt[:k].T * root)
