"""Panel matrices, observation masks, masked projections and matrix norms.

Matrices are plain ``numpy`` arrays of shape ``(n_units, n_periods)``.
Indices are 0-based throughout the Python API; file formats and the CLI
use 1-based unit/period labels and convert at the boundary.

Both mask constructors take the *first missing period* of a treated row:
``mask_block(..., first_treated=k)`` hides periods ``k, k+1, ...`` of the
treated rows and ``mask_staggered([t_1, ..., t_N], T)`` keeps the first
``t_i`` periods of row ``i`` (``t_i == T`` is a never-treated unit).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .errors import DimensionError, PanelError

__all__ = [
    "ObservationMask",
    "as_panel",
    "project_observed",
    "project_missing",
    "norm",
    "singular_values",
    "mask_block",
    "mask_staggered",
    "mask_from_pairs",
    "RANK_RTOL",
]

# singular values at or below RANK_RTOL * sigma_1 count as zero
RANK_RTOL = 1e-10

Structure = Literal["general", "block", "staggered"]
NormKind = Literal["schatten", "frobenius", "rank", "nuclear", "operator", "max", "l1"]


def as_panel(a, *, allow_nan: bool = False) -> np.ndarray:
    """Return ``a`` as a 2-D float array, rejecting non-finite values."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError("panel needs at least one unit and one period")
    bad = np.isinf(arr) if allow_nan else ~np.isfinite(arr)
    if bad.any():
        raise PanelError("panel contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """The set of observed cells O of an N x T panel.

    ``observed`` is a read-only boolean array (True = observed). The
    complement ``missing`` is the set M of (pseudo-)treated cells.

    Attributes
    ----------
    observed : ndarray of bool, shape (N, T)
    structure : {"general", "block", "staggered"}
    adoption_times : tuple of int, optional
        For staggered masks, the number of observed leading periods of
        each row.
    """

    observed: np.ndarray
    structure: Structure = "general"
    adoption_times: tuple[int, ...] | None = None
    first_treated: int | None = None
    treated_units: tuple[int, ...] | None = None
    _pairs: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        obs = np.array(self.observed, dtype=bool, copy=True)
        if obs.ndim != 2 or 0 in obs.shape:
            raise DimensionError(f"mask must be a non-empty 2-D array, got shape {obs.shape}")
        obs.setflags(write=False)
        object.__setattr__(self, "observed", obs)
        pairs = np.argwhere(obs)
        pairs.setflags(write=False)
        object.__setattr__(self, "_pairs", pairs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.shape

    @property
    def n_units(self) -> int:
        return self.observed.shape[0]

    @property
    def n_periods(self) -> int:
        return self.observed.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return ~self.observed

    @property
    def n_observed(self) -> int:
        return int(self._pairs.shape[0])

    @property
    def n_missing(self) -> int:
        return self.observed.size - self.n_observed

    @property
    def pairs(self) -> np.ndarray:
        """Observed (unit, period) pairs, row-major sorted, shape (|O|, 2)."""
        return self._pairs

    @property
    def flat_observed(self) -> np.ndarray:
        """Flat (row-major) indices of observed cells."""
        return self._pairs[:, 0] * self.n_periods + self._pairs[:, 1]

    @property
    def control_units(self) -> np.ndarray:
        """Units whose entire row is observed."""
        return np.flatnonzero(self.observed.all(axis=1))

    @property
    def n_control(self) -> int:
        return int(self.observed.all(axis=1).sum())

    def transpose(self) -> "ObservationMask":
        return ObservationMask(self.observed.T)

    def check_shape(self, a: np.ndarray) -> None:
        if a.shape != self.shape:
            raise DimensionError(f"matrix shape {a.shape} does not match mask shape {self.shape}")

    def row_prefix_lengths(self) -> np.ndarray | None:
        """Per-row count of observed leading periods if every row is a
        prefix (observed then missing), else None."""
        obs = self.observed
        lengths = obs.sum(axis=1)
        prefix = np.arange(self.n_periods)[None, :] < lengths[:, None]
        if not np.array_equal(prefix, obs):
            return None
        return lengths

    def missing_block(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(rows, cols) if M is a nonempty Cartesian product rows x cols."""
        miss = self.missing
        rows = np.flatnonzero(miss.any(axis=1))
        cols = np.flatnonzero(miss.any(axis=0))
        if rows.size == 0:
            return None
        if miss.sum() != rows.size * cols.size or not miss[np.ix_(rows, cols)].all():
            return None
        return rows, cols

    def with_observed(self, observed: np.ndarray) -> "ObservationMask":
        return ObservationMask(observed)


def _as_mask(mask, shape) -> ObservationMask:
    if not isinstance(mask, ObservationMask):
        mask = ObservationMask(np.asarray(mask, dtype=bool))
    if mask.shape != tuple(shape):
        raise DimensionError(f"matrix shape {tuple(shape)} does not match mask shape {mask.shape}")
    return mask


def project_observed(a, mask) -> np.ndarray:
    """Keep observed entries, zero the rest."""
    a = np.asarray(a, dtype=float)
    mask = _as_mask(mask, a.shape)
    return np.where(mask.observed, a, 0.0)


def project_missing(a, mask) -> np.ndarray:
    """Keep missing entries, zero the observed ones."""
    a = np.asarray(a, dtype=float)
    mask = _as_mask(mask, a.shape)
    return np.where(mask.observed, 0.0, a)


def singular_values(a) -> np.ndarray:
    return np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)


def norm(a, kind: NormKind = "frobenius", p: float | None = None) -> float:
    """Matrix norms from the singular values or the entries.

    ``kind`` is one of ``schatten`` (requires ``p >= 1``), ``frobenius``,
    ``rank``, ``nuclear``, ``operator``, ``max`` or ``l1`` (entrywise).
    The rank counts singular values above ``RANK_RTOL * sigma_1``.
    """
    a = as_panel(a)
    if kind == "max":
        return float(np.abs(a).max())
    if kind == "l1":
        return float(np.abs(a).sum())
    if kind == "frobenius":
        return float(np.sqrt(np.sum(a * a)))
    s = singular_values(a)
    if kind == "nuclear":
        return float(s.sum())
    if kind == "operator":
        return float(s[0]) if s.size else 0.0
    if kind == "rank":
        if s.size == 0 or s[0] == 0:
            return 0.0
        return float(np.count_nonzero(s > RANK_RTOL * s[0]))
    if kind == "schatten":
        if p is None or p < 1:
            raise ValueError("schatten norm requires p >= 1")
        if np.isinf(p):
            return float(s[0])
        return float(np.sum(s**p) ** (1.0 / p))
    raise ValueError(f"unknown norm kind {kind!r}")


def mask_block(n_units: int, n_periods: int, first_treated: int, treated_units: Iterable[int]) -> ObservationMask:
    """Treated units are missing from period ``first_treated`` (0-based) on."""
    if not 0 <= first_treated < n_periods:
        raise PanelError(f"first treated period {first_treated} outside [0, {n_periods - 1}]")
    treated = np.unique(np.asarray(list(treated_units), dtype=int))
    if treated.size and (treated.min() < 0 or treated.max() >= n_units):
        raise PanelError("treated unit index out of range")
    obs = np.ones((n_units, n_periods), dtype=bool)
    obs[np.ix_(treated, np.arange(first_treated, n_periods))] = False
    return ObservationMask(
        obs,
        structure="block",
        first_treated=int(first_treated),
        treated_units=tuple(int(i) for i in treated),
    )


def mask_staggered(adoption_times, n_periods: int) -> ObservationMask:
    """Row ``i`` is observed for its first ``adoption_times[i]`` periods.

    A value of ``n_periods`` (or ``None``) marks a never-treated unit.
    """
    times = [n_periods if t is None else int(t) for t in adoption_times]
    if not times:
        raise PanelError("need at least one unit")
    for i, t in enumerate(times):
        if not 1 <= t <= n_periods:
            raise PanelError(f"adoption time {t} of unit {i} outside [1, {n_periods}]")
    t = np.asarray(times)
    obs = np.arange(n_periods)[None, :] < t[:, None]
    return ObservationMask(obs, structure="staggered", adoption_times=tuple(times))


def mask_from_pairs(n_units: int, n_periods: int, pairs: Iterable[tuple[int, int]]) -> ObservationMask:
    """General mask from 0-based observed (unit, period) pairs."""
    obs = np.zeros((n_units, n_periods), dtype=bool)
    for i, t in pairs:
        if not (0 <= i < n_units and 0 <= t < n_periods):
            raise PanelError(f"pair ({i}, {t}) outside the {n_units}x{n_periods} grid")
        obs[i, t] = True
    return ObservationMask(obs)
