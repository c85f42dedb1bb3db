"""Synthetic panels, pseudo-treatment masks and the imputation-accuracy
comparison protocol.

A comparison takes a fully observed panel, hides cells according to a
pseudo-treatment plan, runs each estimator on the masked panel and scores
the root-mean-squared error on the hidden cells.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .baselines import EstimatorSpec, run_estimator
from .errors import EmptyMaskError, InfeasibleError, PanelError
from .panel import ObservationMask, as_panel, mask_block, mask_staggered

__all__ = [
    "SyntheticSpec",
    "PseudoTreatmentPlan",
    "EstimatorSummary",
    "EvalReport",
    "generate_synthetic",
    "make_pseudo_masks",
    "rmse_on_missing",
    "run_comparison",
    "replication_rng",
]


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep``; the same in serial and
    parallel runs."""
    return np.random.default_rng([int(seed), int(rep)])


def _derived_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1)[0])


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    t: int
    rank: int
    noise_sigma: float = 1.0
    noise_model: Literal["iid_gaussian", "ar1"] = "iid_gaussian"
    rho: float = 0.0
    factor_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.t < 1:
            raise PanelError("panel dimensions must be positive")
        if not 0 <= self.rank <= min(self.n, self.t):
            raise PanelError(f"rank {self.rank} must lie in [0, min(n, t)]")
        if self.noise_sigma < 0:
            raise PanelError("noise_sigma must be nonnegative")
        if self.noise_model not in ("iid_gaussian", "ar1"):
            raise PanelError(f"unknown noise model {self.noise_model!r}")
        if self.noise_model == "ar1" and not -1 < self.rho < 1:
            raise PanelError("AR(1) rho must lie strictly between -1 and 1")


def generate_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``L* = factor_scale * U V^T / sqrt(rank)`` with standard normal
    factors and ``Y = L* + noise``.

    AR(1) noise is stationary with marginal standard deviation
    ``noise_sigma`` along each unit's periods.
    """
    rng = np.random.default_rng(spec.seed)
    n, t, r = spec.n, spec.t, spec.rank
    u = rng.standard_normal((n, r))
    v = rng.standard_normal((t, r))
    l_star = spec.factor_scale * (u @ v.T) / math.sqrt(r) if r else np.zeros((n, t))
    shocks = rng.standard_normal((n, t))
    if spec.noise_model == "ar1":
        noise = np.empty((n, t))
        noise[:, 0] = shocks[:, 0]
        scale = math.sqrt(1.0 - spec.rho**2)
        for s in range(1, t):
            noise[:, s] = spec.rho * noise[:, s - 1] + scale * shocks[:, s]
    else:
        noise = shocks
    return l_star, l_star + spec.noise_sigma * noise


@dataclass(frozen=True)
class PseudoTreatmentPlan:
    """How to hide cells in a fully observed panel.

    ``simultaneous``: ``n_treated`` random units miss every period from
    ``ceil(t0_ratio * T)`` on. ``staggered``: each of ``n_treated`` random
    units observes a prefix whose length is uniform on
    ``{ceil(adoption_low * T), ..., T}`` (``T`` meaning never treated),
    or up to ``T - 1`` when ``allow_never`` is False.
    """

    mode: Literal["simultaneous", "staggered"]
    n_treated: int
    t0_ratio: float = 0.5
    adoption_low: float = 0.5
    allow_never: bool = True
    replications: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("simultaneous", "staggered"):
            raise PanelError(f"unknown plan mode {self.mode!r}")
        if self.n_treated < 1:
            raise PanelError("n_treated must be positive")
        if not 0.0 < self.t0_ratio < 1.0:
            raise PanelError("t0_ratio must lie strictly between 0 and 1")
        if not 0.0 < self.adoption_low <= 1.0:
            raise PanelError("adoption_low must lie in (0, 1]")
        if self.replications < 1:
            raise PanelError("replications must be positive")

    def check(self, n: int, t: int) -> None:
        if self.n_treated >= n:
            raise InfeasibleError(f"n_treated={self.n_treated} leaves no control units among {n}")
        if self.mode == "simultaneous" and math.ceil(self.t0_ratio * t) >= t:
            raise InfeasibleError(f"t0_ratio={self.t0_ratio} leaves no treated periods among {t}")


def make_pseudo_masks(plan: PseudoTreatmentPlan, n: int, t: int) -> list[ObservationMask]:
    """One mask per replication, each drawn from its own stream."""
    plan.check(n, t)
    masks = []
    for rep in range(plan.replications):
        rng = replication_rng(plan.seed, rep)
        treated = np.sort(rng.choice(n, plan.n_treated, replace=False))
        if plan.mode == "simultaneous":
            masks.append(mask_block(n, t, math.ceil(plan.t0_ratio * t), treated))
        else:
            low = min(max(math.ceil(plan.adoption_low * t), 1), t)
            high = t if plan.allow_never else max(t - 1, low)
            times = np.full(n, t)
            times[treated] = rng.integers(low, high + 1, size=treated.size)
            masks.append(mask_staggered(times, t))
    return masks


def rmse_on_missing(estimate, truth, mask: ObservationMask) -> float:
    """Root-mean-squared error over the missing cells."""
    if mask.n_missing == 0:
        raise EmptyMaskError("no missing cells to score")
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    mask.check_shape(est)
    mask.check_shape(tru)
    d = (est - tru)[mask.missing]
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EstimatorSummary:
    name: str
    values: list
    effective_ranks: list = field(default_factory=list)
    skip_reasons: list = field(default_factory=list)

    @property
    def scored(self) -> np.ndarray:
        return np.array([v for v in self.values if v is not None], dtype=float)

    @property
    def n_reps(self) -> int:
        return int(self.scored.size)

    @property
    def skipped(self) -> int:
        return sum(v is None for v in self.values)

    @property
    def mean_rmse(self) -> float | None:
        s = self.scored
        return float(s.mean()) if s.size else None

    @property
    def se(self) -> float | None:
        """Standard error of the mean across replications."""
        s = self.scored
        return float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else None


@dataclass
class EvalReport:
    estimators: list[EstimatorSummary]
    seed: int
    config_echo: dict = field(default_factory=dict)

    def summary(self, name: str) -> EstimatorSummary:
        for e in self.estimators:
            if e.name == name:
                return e
        raise KeyError(name)


def _run_one(y, mask, specs, seed, rep, workers):
    observed = np.where(mask.observed, y, np.nan)
    rep_seed = _derived_seed(seed, rep)
    rows = []
    for spec in specs:
        try:
            est = run_estimator(observed, mask, spec, seed=rep_seed, workers=workers)
        except InfeasibleError as exc:
            rows.append((None, None, str(exc)))
            continue
        rows.append((rmse_on_missing(est.completed, y, mask), est.meta.get("effective_rank"), None))
    return rows


def run_comparison(
    y,
    plan: PseudoTreatmentPlan,
    estimators: list[EstimatorSpec],
    *,
    workers: int = 1,
    config_echo: dict | None = None,
) -> EvalReport:
    """Score every estimator on every replication mask.

    Estimators that are infeasible on a mask are recorded as skipped for
    that replication. Replications may run on ``workers`` threads; results
    are collected in replication order, so the report does not depend on
    the thread count.
    """
    y = as_panel(y)
    n, t = y.shape
    masks = make_pseudo_masks(plan, n, t)

    def job(rep):
        return _run_one(y, masks[rep], estimators, plan.seed, rep, 1)

    reps = range(len(masks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, reps))
    else:
        results = [job(r) for r in reps]
    summaries = []
    for k, spec in enumerate(estimators):
        rows = [res[k] for res in results]
        summaries.append(
            EstimatorSummary(
                spec.name,
                [r[0] for r in rows],
                [r[1] for r in rows] if spec.kind == "mc_nnm" else [],
                [r[2] for r in rows],
            )
        )
    return EvalReport(summaries, plan.seed, dict(config_echo or {}))
