"""Elastic-net regression by cyclic coordinate descent.

Minimizes::

    1/(2n) ||y - b0 - X w||^2 + lam * (alpha ||w||_1 + (1 - alpha)/2 ||w||^2)

with an unpenalized intercept ``b0``. The inner loop is compiled with
numba; paths over a descending penalty grid are warm started.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "Weights",
    "fit_elastic_net",
    "fit_elastic_net_cv",
    "enet_lambda_max",
    "kkt_residual",
]


@dataclass
class Weights:
    coefficients: np.ndarray
    intercept: float
    lam: float = 0.0
    alpha: float = 1.0
    converged: bool = True
    n_sweeps: int = 0

    def predict(self, design) -> np.ndarray:
        return self.intercept + np.asarray(design, dtype=float) @ self.coefficients


@njit(cache=True)
def _cd_sweep(x, r, w, col_sq, l1, l2, idx):
    """One coordinate pass over ``idx``; returns the largest scaled step."""
    n = x.shape[0]
    max_step = 0.0
    for j in idx:
        if col_sq[j] == 0.0:
            w[j] = 0.0
            continue
        z = 0.0
        for i in range(n):
            z += x[i, j] * r[i]
        z = z / n + col_sq[j] * w[j]
        if z > l1:
            new = (z - l1) / (col_sq[j] + l2)
        elif z < -l1:
            new = (z + l1) / (col_sq[j] + l2)
        else:
            new = 0.0
        delta = new - w[j]
        if delta != 0.0:
            for i in range(n):
                r[i] -= x[i, j] * delta
            w[j] = new
            step = abs(delta) * np.sqrt(col_sq[j])
            if step > max_step:
                max_step = step
    return max_step


@njit(cache=True)
def _cd_path(x, y, lambdas, alpha, tol, max_sweeps, w):
    """Coordinate descent on centered data along ``lambdas``.

    ``w`` is the warm start and is updated in place. After each full pass
    the nonzero coordinates are iterated to convergence before the next
    full pass. Returns the coefficient path (len(lambdas), p) and the
    passes used per penalty (negative when the budget ran out).
    """
    n, p = x.shape
    col_sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += x[i, j] * x[i, j]
        col_sq[j] = s / n
    r = y.copy()
    for j in range(p):
        if w[j] != 0.0:
            for i in range(n):
                r[i] -= x[i, j] * w[j]
    everything = np.arange(p)
    path = np.zeros((lambdas.shape[0], p))
    sweeps = np.zeros(lambdas.shape[0], dtype=np.int64)
    for k in range(lambdas.shape[0]):
        l1 = lambdas[k] * alpha
        l2 = lambdas[k] * (1.0 - alpha)
        done = False
        it = 0
        while it < max_sweeps:
            it += 1
            if _cd_sweep(x, r, w, col_sq, l1, l2, everything) < tol:
                done = True
                break
            active = np.flatnonzero(w)
            while it < max_sweeps:
                it += 1
                if _cd_sweep(x, r, w, col_sq, l1, l2, active) < tol:
                    break
        path[k] = w
        sweeps[k] = it if done else -it
    return path, sweeps


def _center(x, y):
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    return x - x_mean, y - y_mean, x_mean, y_mean


def _tolerance(y_centered, tol):
    return tol * max(1.0, float(np.sqrt(np.mean(y_centered**2))))


def fit_elastic_net(design, target, lam: float, alpha: float, *, tol: float = 1e-10, max_sweeps: int = 100_000, init=None) -> Weights:
    """Elastic-net fit at a single penalty.

    Non-convergence within ``max_sweeps`` is reported on the returned
    weights (``converged=False``); the last iterate is returned.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"design {x.shape} and target {y.shape} do not match")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    xc, yc, x_mean, y_mean = _center(x, y)
    w = np.zeros(x.shape[1]) if init is None else np.array(init, dtype=float)
    path, sweeps = _cd_path(xc, yc, np.array([float(lam)]), float(alpha), _tolerance(yc, tol), max_sweeps, w)
    coef = path[0]
    return Weights(coef, y_mean - float(x_mean @ coef), float(lam), float(alpha), bool(sweeps[0] > 0), int(abs(sweeps[0])))


def enet_lambda_max(design, target, alpha: float) -> float:
    """Smallest penalty with all coefficients zero (``alpha`` floored at
    1e-3 so ridge-like fits still get a finite grid top)."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    xc, yc, _, _ = _center(x, y)
    return float(np.max(np.abs(xc.T @ yc)) / (x.shape[0] * max(alpha, 1e-3))) if x.shape[1] else 0.0


def _lambda_grid(top: float, n_lambdas: int, ratio: float) -> np.ndarray:
    if top <= 0:
        return np.array([0.0])
    return top * np.geomspace(1.0, ratio, n_lambdas)


def fit_elastic_net_cv(
    design,
    target,
    alpha: float = 0.5,
    *,
    n_lambdas: int = 20,
    ratio: float = 1e-3,
    n_folds: int = 5,
    seed: int = 0,
    tol: float = 1e-7,
    cv_tol: float = 1e-5,
    max_sweeps: int = 10_000,
) -> Weights:
    """Pick the penalty by K-fold CV on a geometric grid, then refit.

    Folds are a seeded random partition of the rows; ``n_folds`` is capped
    at the number of rows. With fewer than two rows no CV is possible and
    the intercept-only fit (grid top) is returned. Ties go to the larger
    penalty. Fold fits use the looser ``cv_tol``; the refit uses ``tol``.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    n = x.shape[0]
    grid = _lambda_grid(enet_lambda_max(x, y, alpha), n_lambdas, ratio)
    if n < 2 or x.shape[1] == 0:
        return fit_elastic_net(x, y, float(grid[0]), alpha, tol=tol, max_sweeps=max_sweeps)
    k = min(n_folds, n)
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % k
    sq_err = np.zeros(grid.size)
    for f in range(k):
        test = fold_of == f
        xc, yc, x_mean, y_mean = _center(x[~test], y[~test])
        w = np.zeros(x.shape[1])
        path, _ = _cd_path(xc, yc, grid, float(alpha), _tolerance(yc, cv_tol), max_sweeps, w)
        pred = y_mean + (x[test] - x_mean) @ path.T
        sq_err += np.sum((pred - y[test, None]) ** 2, axis=0)
    best = int(np.flatnonzero(sq_err == sq_err.min())[0])
    xc, yc, x_mean, y_mean = _center(x, y)
    w = np.zeros(x.shape[1])
    path, sweeps = _cd_path(xc, yc, grid[: best + 1], float(alpha), _tolerance(yc, tol), max_sweeps, w)
    coef = path[-1]
    return Weights(coef, y_mean - float(x_mean @ coef), float(grid[best]), float(alpha), bool(sweeps[-1] > 0), int(abs(sweeps[-1])))


def kkt_residual(design, target, weights: Weights, lam: float, alpha: float) -> float:
    """Largest violation of the elastic-net optimality conditions.

    With ``g_j`` the gradient of the quadratic part plus the ridge term,
    zero coefficients need ``|g_j| <= lam*alpha`` and nonzero ones need
    ``g_j = -lam*alpha*sign(w_j)``. The intercept condition is that the
    residuals sum to zero.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    w = weights.coefficients
    n = x.shape[0]
    r = y - weights.intercept - x @ w
    g = -(x.T @ r) / n + lam * (1.0 - alpha) * w
    l1 = lam * alpha
    viol = np.where(w == 0.0, np.maximum(np.abs(g) - l1, 0.0), np.abs(g + l1 * np.sign(w)))
    return float(max(viol.max(initial=0.0), abs(r.mean())))
