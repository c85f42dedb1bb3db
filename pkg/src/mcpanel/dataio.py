"""File formats: long-format panel CSV, covariate CSVs, key=value config
files and evaluation reports (JSON plus a flat per-replication CSV).

Panel CSV columns are ``unit,time,outcome,treated``. Unit and time labels
are arbitrary strings, indexed in order of first appearance. A cell is
missing when ``treated`` is 1 or ``outcome`` is empty.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ParseError
from .harness import EvalReport
from .panel import ObservationMask

__all__ = [
    "Panel",
    "load_panel_csv",
    "write_panel_csv",
    "load_unit_covariates",
    "load_time_covariates",
    "load_unit_time_covariates",
    "load_config",
    "report_to_dict",
    "write_report",
    "REPORT_SCHEMA",
]

PANEL_COLUMNS = ("unit", "time", "outcome", "treated")

REPORT_SCHEMA = {
    "type": "object",
    "required": ["estimators", "config_echo", "seed"],
    "properties": {
        "estimators": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "mean_rmse", "se", "n_reps", "skipped"],
                "properties": {
                    "name": {"type": "string"},
                    "mean_rmse": {"type": ["number", "null"], "minimum": 0},
                    "se": {"type": ["number", "null"], "minimum": 0},
                    "n_reps": {"type": "integer", "minimum": 0},
                    "skipped": {"type": "integer", "minimum": 0},
                },
            },
        },
        "config_echo": {"type": "object"},
        "seed": {"type": "integer"},
    },
}


class Panel(NamedTuple):
    """Outcome matrix, observation mask and the row/column labels."""

    y: np.ndarray
    mask: ObservationMask
    units: list[str]
    times: list[str]


def _reader(path):
    f = open(path, newline="", encoding="utf-8")
    return f, csv.reader(f)


def _header(rows, path, required):
    try:
        header = [h.strip() for h in next(rows)]
    except StopIteration:
        raise ParseError(f"{path}: empty file, header required") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
    return header


def load_panel_csv(path) -> Panel:
    """Parse a long-format panel file.

    Raises
    ------
    ParseError
        For missing columns, unparsable values, duplicate (unit, time)
        rows and non-rectangular unit/time index sets; messages carry the
        line number.
    """
    f, rows = _reader(path)
    with f:
        header = _header(rows, path, PANEL_COLUMNS)
        col = {name: header.index(name) for name in PANEL_COLUMNS}
        units: dict[str, int] = {}
        times: dict[str, int] = {}
        cells: dict[tuple[int, int], tuple[float, bool]] = {}
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            unit, time = row[col["unit"]].strip(), row[col["time"]].strip()
            raw, flag = row[col["outcome"]].strip(), row[col["treated"]].strip()
            if flag not in ("0", "1"):
                raise ParseError(f"{path}: line {lineno}: treated must be 0 or 1, got {flag!r}")
            if raw:
                try:
                    value = float(raw)
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: outcome {raw!r} is not a number") from None
                if not np.isfinite(value):
                    raise ParseError(f"{path}: line {lineno}: outcome must be finite")
            else:
                value = np.nan
            i = units.setdefault(unit, len(units))
            t = times.setdefault(time, len(times))
            if (i, t) in cells:
                raise ParseError(f"{path}: line {lineno}: duplicate cell unit={unit!r} time={time!r}")
            cells[(i, t)] = (value, flag == "0" and raw != "")
    n, t = len(units), len(times)
    if n == 0:
        raise ParseError(f"{path}: no data rows")
    if len(cells) != n * t:
        absent = next((u, s) for u in range(n) for s in range(t) if (u, s) not in cells)
        unit_label = list(units)[absent[0]]
        time_label = list(times)[absent[1]]
        raise ParseError(
            f"{path}: panel is not rectangular: {len(cells)} rows for {n} units x {t} periods "
            f"(no row for unit={unit_label!r} time={time_label!r})"
        )
    y = np.full((n, t), np.nan)
    obs = np.zeros((n, t), dtype=bool)
    for (i, s), (value, seen) in cells.items():
        y[i, s] = value
        obs[i, s] = seen
    return Panel(y, ObservationMask(obs), list(units), list(times))


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_panel_csv(path, y, mask: ObservationMask, units=None, times=None) -> None:
    """Write a long-format panel; cells outside ``mask`` get treated=1.
    Values are written with ``repr`` so they load back bit for bit.
    Default labels are 1-based unit and period numbers."""
    y = np.asarray(y, dtype=float)
    mask.check_shape(y)
    n, t = y.shape
    units = list(units) if units is not None else [str(i + 1) for i in range(n)]
    times = list(times) if times is not None else [str(s + 1) for s in range(t)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PANEL_COLUMNS)
        for i in range(n):
            for s in range(t):
                w.writerow([units[i], times[s], _fmt(y[i, s]), "0" if mask.observed[i, s] else "1"])


def _load_keyed(path, key_cols: tuple[str, ...]):
    f, rows = _reader(path)
    with f:
        header = _header(rows, path, key_cols)
        names = [h for h in header if h not in key_cols]
        if not names:
            raise ParseError(f"{path}: line 1: no covariate columns")
        idx = [header.index(c) for c in key_cols]
        vidx = [header.index(c) for c in names]
        table: dict[tuple[str, ...], list[float]] = {}
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            key = tuple(row[k].strip() for k in idx)
            if key in table:
                raise ParseError(f"{path}: line {lineno}: duplicate key {key}")
            try:
                table[key] = [float(row[k]) for k in vidx]
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric covariate value") from None
    return names, table


def load_unit_covariates(path, units: list[str]) -> np.ndarray:
    """``unit,<name>,...`` file as an (N, P) array in ``units`` order."""
    _, table = _load_keyed(path, ("unit",))
    try:
        return np.array([table[(u,)] for u in units])
    except KeyError as exc:
        raise ParseError(f"{path}: no covariates for unit {exc.args[0][0]!r}") from None


def load_time_covariates(path, times: list[str]) -> np.ndarray:
    """``time,<name>,...`` file as a (T, Q) array in ``times`` order."""
    _, table = _load_keyed(path, ("time",))
    try:
        return np.array([table[(s,)] for s in times])
    except KeyError as exc:
        raise ParseError(f"{path}: no covariates for time {exc.args[0][0]!r}") from None


def load_unit_time_covariates(path, units: list[str], times: list[str]) -> np.ndarray:
    """``unit,time,<name>,...`` file as an (N, T, J) array."""
    names, table = _load_keyed(path, ("unit", "time"))
    out = np.empty((len(units), len(times), len(names)))
    for i, u in enumerate(units):
        for s, tm in enumerate(times):
            if (u, tm) not in table:
                raise ParseError(f"{path}: no covariates for unit {u!r} time {tm!r}")
            out[i, s] = table[(u, tm)]
    return out


def load_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ParseError(f"{path}: line {lineno}: empty key")
            out[key] = value
    return out


def report_to_dict(report: EvalReport, extra: dict | None = None) -> dict:
    entries = []
    for e in report.estimators:
        entry = {"name": e.name, "mean_rmse": e.mean_rmse, "se": e.se, "n_reps": e.n_reps, "skipped": e.skipped}
        entry.update(extra or {})
        entries.append(entry)
    return {"estimators": entries, "config_echo": report.config_echo, "seed": report.seed}


def write_report(report: EvalReport | list[tuple[dict, EvalReport]], path, csv_path=None) -> dict:
    """Write a report (or a sweep of labelled reports) as JSON, and the
    per-replication rows as CSV when ``csv_path`` is given.

    For a sweep, each estimator entry also carries the sweep labels.
    Returns the JSON document.
    """
    points = report if isinstance(report, list) else [({}, report)]
    doc = None
    for labels, rep in points:
        d = report_to_dict(rep, labels)
        if doc is None:
            doc = d
        else:
            doc["estimators"].extend(d["estimators"])
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if csv_path is not None:
        label_keys = sorted({k for labels, _ in points for k in labels})
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([*label_keys, "estimator", "replication", "rmse", "effective_rank", "skipped"])
            for labels, rep in points:
                for e in rep.estimators:
                    for r, v in enumerate(e.values):
                        rank = e.effective_ranks[r] if e.effective_ranks else None
                        w.writerow(
                            [*(labels.get(k, "") for k in label_keys), e.name, r,
                             "" if v is None else repr(v), "" if rank is None else rank, int(v is None)]
                        )
    return doc
