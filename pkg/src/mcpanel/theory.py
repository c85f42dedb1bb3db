"""Numerical companions to the error analysis of MC-NNM: the noise
operator norm, the deterministic oracle inequality, the high-probability
error bound, and a plug-in estimate of the control-unit probability.

None of these prove anything; they evaluate the quantities on concrete
instances so that regressions in the estimator show up as violations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .panel import ObservationMask, as_panel
from .soft_impute import McnnmConfig, fit_mcnnm

__all__ = [
    "TheoremBoundConfig",
    "LemmaCheck",
    "noise_operator_norm",
    "check_lemma_error_bound",
    "theorem_bound",
    "theorem_lambda",
    "empirical_pc",
    "noise_norm_ratio",
    "monotonicity_lattice",
    "run_lemma_suite",
    "calibrate_noise_constant",
]

Status = Literal["holds", "fails", "not_applicable"]


def noise_operator_norm(e, mask: ObservationMask) -> float:
    """Largest singular value of the noise restricted to observed cells."""
    e = as_panel(e, allow_nan=True)
    mask.check_shape(e)
    pe = np.where(mask.observed, e, 0.0)
    if not np.all(np.isfinite(pe)):
        raise ValueError("noise must be finite on observed cells")
    return float(np.linalg.norm(pe, 2)) if pe.size else 0.0


@dataclass(frozen=True)
class LemmaCheck:
    status: Status
    lhs: float
    rhs: float
    threshold: float


def check_lemma_error_bound(l_star, l_hat, mask: ObservationMask, lam: float, rank_r: int, y) -> LemmaCheck:
    """Evaluate the oracle inequality

        sum_O (L* - Lhat)^2 / |O|  <=  10 lam sqrt(R) ||L* - Lhat||_F

    which is guaranteed for ``lam >= 3 ||P_O(Y - L*)||_op / |O|``; below
    that threshold the result is ``not_applicable``.
    """
    l_star = as_panel(l_star)
    l_hat = as_panel(l_hat)
    mask.check_shape(l_star)
    mask.check_shape(l_hat)
    n_obs = mask.n_observed
    threshold = 3.0 * noise_operator_norm(np.asarray(y, dtype=float) - l_star, mask) / n_obs
    delta = l_star - l_hat
    lhs = float(np.sum(delta[mask.observed] ** 2)) / n_obs
    rhs = 10.0 * lam * math.sqrt(rank_r) * float(np.linalg.norm(delta))
    if lam < threshold:
        return LemmaCheck("not_applicable", lhs, rhs, threshold)
    return LemmaCheck("holds" if lhs <= rhs + 1e-10 else "fails", lhs, rhs, threshold)


@dataclass(frozen=True)
class TheoremBoundConfig:
    """Inputs of the error bound. ``c_constant`` is user supplied: only
    its existence is known."""

    c_constant: float = 1.0
    sigma: float = 1.0
    l_max: float = 1.0
    rank: int = 1
    p_c: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_c <= 1.0:
            raise ValueError(f"p_c must lie in (0, 1], got {self.p_c} (the bound diverges at 0)")
        if self.c_constant <= 0 or self.l_max < 0 or self.sigma < 0 or self.rank < 1:
            raise ValueError("c_constant must be positive, sigma and l_max nonnegative, rank at least 1")


def theorem_bound(cfg: TheoremBoundConfig, n: int, t: int) -> float:
    """``C`` times the largest of the three rate terms for the per-entry
    RMSE of the estimate."""
    if n < 1 or t < 1:
        raise ValueError("n and t must be positive")
    lg = math.log(n + t)
    pc2 = cfg.p_c**2
    terms = (
        cfg.l_max * math.sqrt(lg / (n * pc2)),
        cfg.sigma * math.sqrt(cfg.rank * lg / (t * pc2)),
        cfg.sigma * math.sqrt(cfg.rank * lg**3 / (n * pc2)),
    )
    return cfg.c_constant * max(terms)


def theorem_lambda(sigma: float, n: int, t: int, n_observed: int, constant: float = 1.0) -> float:
    """Penalty level under which the error bound holds (up to
    ``constant``); usable as an alternative anchor for a penalty grid."""
    lg = math.log(n + t)
    return constant * sigma * max(math.sqrt(n * lg), math.sqrt(t) * lg**1.5) / n_observed


def empirical_pc(mask: ObservationMask) -> float:
    """Fraction of fully observed units. This estimates the average
    probability of being a control unit and serves as a diagnostic proxy
    for the minimum over units."""
    return float(mask.n_control) / mask.n_units


def noise_norm_ratio(e, mask: ObservationMask, sigma: float) -> float:
    """``||P_O(E)||_op`` divided by its high-probability rate
    ``sigma * max(sqrt(N log(N+T)), sqrt(T) log^{3/2}(N+T))``."""
    n, t = mask.shape
    lg = math.log(n + t)
    return noise_operator_norm(e, mask) / (sigma * max(math.sqrt(n * lg), math.sqrt(t) * lg**1.5))


def monotonicity_lattice(base: TheoremBoundConfig | None = None) -> list[str]:
    """Check the direction of the bound over a parameter lattice; returns
    the violations (empty when all hold).

    Checked: nondecreasing in ``sigma``, ``l_max`` and ``rank``;
    nonincreasing in ``p_c``; nonincreasing when ``n`` and ``t`` grow
    together. Growing ``t`` alone is not checked because ``log(n + t)``
    makes two of the three terms increase with ``t`` at fixed ``n``.
    """
    base = base or TheoremBoundConfig()
    violations = []
    for sigma, l_max, rank, pc, nn, tt in itertools.product(
        (0.0, 0.5, 1.0, 2.0), (0.5, 1.0, 2.0), (1, 2, 4), (0.25, 0.5, 1.0), (20, 100, 400), (20, 100, 400)
    ):
        cfg = replace(base, sigma=sigma, l_max=l_max, rank=rank, p_c=pc)
        b = theorem_bound(cfg, nn, tt)
        bigger = {
            "sigma": replace(cfg, sigma=sigma * 2 + 0.1),
            "l_max": replace(cfg, l_max=l_max * 2),
            "rank": replace(cfg, rank=rank + 1),
        }
        for name, cfg2 in bigger.items():
            if theorem_bound(cfg2, nn, tt) < b:
                violations.append(f"bound decreased when {name} increased at {cfg}, n={nn}, t={tt}")
        if pc < 1.0 and theorem_bound(replace(cfg, p_c=min(1.0, pc * 2)), nn, tt) > b:
            violations.append(f"bound increased with p_c at {cfg}, n={nn}, t={tt}")
        if theorem_bound(cfg, 2 * nn, 2 * tt) > b:
            violations.append(f"bound increased when n and t doubled at {cfg}, n={nn}, t={tt}")
    return violations


def _staggered_instance(n, t, rank, sigma, seed):
    from .harness import PseudoTreatmentPlan, SyntheticSpec, generate_synthetic, make_pseudo_masks

    l_star, y = generate_synthetic(SyntheticSpec(n, t, rank, sigma, seed=seed))
    plan = PseudoTreatmentPlan("staggered", n_treated=n // 2, seed=seed)
    return l_star, y, make_pseudo_masks(plan, n, t)[0]


def run_lemma_suite(
    n_instances: int = 50, n: int = 30, t: int = 30, rank: int = 2, sigma: float = 0.2, seed: int = 0
) -> list[LemmaCheck]:
    """Fit MC-NNM at ``lam = 3 ||P_O(E)||_op / |O|`` on seeded staggered
    instances and evaluate the oracle inequality on each."""
    results = []
    config = McnnmConfig(tol=1e-8, max_iter=5000)
    for k in range(n_instances):
        l_star, y, mask = _staggered_instance(n, t, rank, sigma, seed * 100_003 + k)
        lam = 3.0 * noise_operator_norm(y - l_star, mask) / mask.n_observed
        fit = fit_mcnnm(np.where(mask.observed, y, np.nan), mask, config, lam=lam)
        results.append(check_lemma_error_bound(l_star, fit.estimate, mask, lam, rank, y))
    return results


def calibrate_noise_constant(
    n_instances: int = 100, n: int = 50, t: int = 50, sigma: float = 1.0, seed: int = 0
) -> np.ndarray:
    """Ratios :func:`noise_norm_ratio` on seeded Gaussian noise with
    staggered masks. The maximum over one batch serves as a frozen
    regression threshold for later batches."""
    ratios = np.empty(n_instances)
    for k in range(n_instances):
        l_star, y, mask = _staggered_instance(n, t, 1, sigma, seed * 100_003 + k)
        ratios[k] = noise_norm_ratio(y - l_star, mask, sigma)
    return ratios
