"""Command-line interface: ``mcpanel {impute,cv,simulate,compare,check-theory}``.

Exit codes: 0 success, 1 usage or parse error, 2 infeasible estimator or
numerical failure. Every command is a function of its input files, flags
and ``--seed``; reports do not depend on ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .baselines import KINDS, EnConfig, EstimatorSpec, run_estimator
from .dataio import load_config, load_panel_csv, write_panel_csv, write_report
from .errors import InfeasibleError, ParseError, PanelError
from .harness import PseudoTreatmentPlan, SyntheticSpec, generate_synthetic, make_pseudo_masks, run_comparison
from .panel import ObservationMask
from .soft_impute import CvConfig, McnnmConfig, cross_validate
from .theory import (
    TheoremBoundConfig,
    monotonicity_lattice,
    run_lemma_suite,
    theorem_bound,
)

log = logging.getLogger("mcpanel")

THEORY_SCHEMA = {
    "type": "object",
    "required": ["lemma", "lattice", "bound", "passed"],
    "properties": {
        "lemma": {
            "type": "object",
            "required": ["instances", "holds", "fails", "not_applicable", "max_ratio"],
            "properties": {
                "instances": {"type": "integer", "minimum": 0},
                "holds": {"type": "integer", "minimum": 0},
                "fails": {"type": "integer", "minimum": 0},
                "not_applicable": {"type": "integer", "minimum": 0},
                "max_ratio": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "lattice": {
            "type": "object",
            "required": ["violations"],
            "properties": {"violations": {"type": "array", "items": {"type": "string"}}},
        },
        "bound": {
            "type": "object",
            "required": ["n", "t", "p_c", "sigma", "value"],
            "properties": {"value": {"type": "number", "minimum": 0}},
        },
        "passed": {"type": "boolean"},
    },
}

# flags that change where or how fast output is produced, never what it says
_NOT_ECHOED = {"command", "out", "csv", "meta", "workers", "verbose", "config", "json", "truth", "handler"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _estimator_kind(text: str) -> str:
    kind = text.strip().replace("-", "_")
    if kind not in KINDS:
        names = ", ".join(k.replace("_", "-") for k in KINDS)
        raise argparse.ArgumentTypeError(f"unknown estimator {text!r} (choose from {names})")
    return kind


def _estimator_list(text: str) -> list[str]:
    kinds = [_estimator_kind(t) for t in text.split(",") if t.strip()]
    if not kinds:
        raise argparse.ArgumentTypeError("empty estimator list")
    if len(set(kinds)) != len(kinds):
        raise argparse.ArgumentTypeError("duplicate estimator in list")
    return kinds


def _lambda(text: str):
    """``auto``, a nonnegative number, or ``max-scaled:<factor>``."""
    text = text.strip()
    if text == "auto":
        return ("auto", None)
    if text.startswith("max-scaled:"):
        factor = _nonneg(text.split(":", 1)[1])
        return ("scaled", factor)
    return ("fixed", _nonneg(text))


def _nonneg(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not math.isfinite(x) or x < 0:
        raise argparse.ArgumentTypeError(f"expected a finite nonnegative number, got {text!r}")
    return x


def _positive_int(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {k}")
    return k


def _probability(text: str) -> float:
    x = _nonneg(text)
    if not 0.0 < x <= 1.0:
        raise argparse.ArgumentTypeError(f"p_c must lie in (0, 1], got {text}")
    return x


def _alpha(text: str) -> float:
    x = _nonneg(text)
    if x > 1:
        raise argparse.ArgumentTypeError("alpha must lie in [0, 1]")
    return x


def _keyvals(text: str) -> dict[str, str]:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


_SYNTH_KEYS = {"n": int, "t": int, "rank": int, "sigma": float, "rho": float, "scale": float, "noise": str, "seed": int}


def _synthetic(text: str) -> dict:
    """Parse ``n=..,t=..,rank=..`` into keyword values; the seed falls
    back to ``--seed`` unless given here."""
    kv = _keyvals(text)
    unknown = set(kv) - set(_SYNTH_KEYS)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown synthetic key(s) {sorted(unknown)}")
    for key in ("n", "t", "rank"):
        if key not in kv:
            raise argparse.ArgumentTypeError(f"synthetic spec needs {key}=")
    try:
        vals = {k: _SYNTH_KEYS[k](v) for k, v in kv.items()}
        _make_synthetic(vals, 0)
    except (ValueError, PanelError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return vals


def _make_synthetic(vals: dict, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        n=vals["n"], t=vals["t"], rank=vals["rank"], noise_sigma=vals.get("sigma", 1.0),
        noise_model=vals.get("noise", "ar1" if "rho" in vals else "iid_gaussian"),
        rho=vals.get("rho", 0.0), factor_scale=vals.get("scale", 1.0), seed=vals.get("seed", seed),
    )


_PLAN_KEYS = {"nt": ("n_treated", int), "t0_ratio": ("t0_ratio", float),
              "adoption_low": ("adoption_low", float), "never": ("allow_never", lambda s: s not in ("0", "false"))}


def _plan(text: str) -> dict:
    mode, _, rest = text.partition(":")
    if mode not in ("simultaneous", "staggered"):
        raise argparse.ArgumentTypeError(f"plan mode must be simultaneous or staggered, got {mode!r}")
    kv = _keyvals(rest)
    unknown = set(kv) - set(_PLAN_KEYS)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown plan key(s) {sorted(unknown)}")
    if "nt" not in kv:
        raise argparse.ArgumentTypeError("plan needs nt=<treated units>")
    try:
        out = {"mode": mode}
        for k, v in kv.items():
            name, conv = _PLAN_KEYS[k]
            out[name] = conv(v)
        return out
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sweep(text: str) -> tuple[str, list]:
    key, _, rng = text.partition("=")
    key = key.strip()
    if key not in _PLAN_KEYS or key == "never":
        raise argparse.ArgumentTypeError(f"cannot sweep {key!r}; use nt, t0_ratio or adoption_low")
    parts = rng.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("sweep must look like key=start:stop:count")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep range {rng!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError("sweep count must be positive")
    values = np.linspace(lo, hi, count) if count > 1 else np.array([lo])
    if key == "nt":
        return key, sorted({int(round(v)) for v in values})
    return key, [round(float(v), 12) for v in values]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcpanel", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key=value file supplying defaults; echoed into reports")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=_positive_int, default=1)

    sp = sub.add_parser("impute", help="fit one estimator and write the completed panel")
    sp.add_argument("panel", help="long-format panel CSV")
    sp.add_argument("--estimator", type=_estimator_kind, default="mc_nnm")
    sp.add_argument("--lambda", dest="lam", type=_lambda, default=("auto", None),
                    help="MC-NNM penalty: auto, a number, or max-scaled:<factor>")
    sp.add_argument("--alpha", type=_alpha, default=0.5, help="elastic-net mixing weight")
    sp.add_argument("--en-lambda", type=_nonneg, default=None, help="elastic-net penalty (default: CV)")
    sp.add_argument("--folds", type=_positive_int, default=5)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--max-iter", type=_positive_int, default=500)
    sp.add_argument("--out", required=True, help="imputed panel CSV")
    sp.add_argument("--meta", help="fit metadata JSON")
    common(sp)
    sp.set_defaults(handler=cmd_impute)

    sp = sub.add_parser("cv", help="cross-validate the MC-NNM penalty")
    sp.add_argument("panel")
    sp.add_argument("--folds", type=_positive_int, default=5)
    sp.add_argument("--out", help="JSON with the grid and CV errors (default: stdout)")
    common(sp)
    sp.set_defaults(handler=cmd_cv)

    sp = sub.add_parser("simulate", help="write a synthetic panel")
    sp.add_argument("--synthetic", type=_synthetic, required=True, help="n=..,t=..,rank=..[,sigma=..,rho=..,scale=..]")
    sp.add_argument("--plan", type=_plan, help="optionally hide cells, e.g. staggered:nt=10")
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="also write the noiseless low-rank matrix here")
    common(sp)
    sp.set_defaults(handler=cmd_simulate)

    sp = sub.add_parser("compare", help="pseudo-treatment RMSE comparison")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("panel", nargs="?", help="fully observed long-format panel CSV")
    src.add_argument("--synthetic", type=_synthetic)
    sp.add_argument("--plan", type=_plan, required=True, help="simultaneous:nt=8 or staggered:nt=35[,t0_ratio=..]")
    sp.add_argument("--reps", type=_positive_int, default=10)
    sp.add_argument("--sweep", type=_sweep, help="key=start:stop:count over a plan parameter")
    sp.add_argument("--estimators", type=_estimator_list, default=_estimator_list("did,hr-en,vt-en,sc-adh,mc-nnm"))
    sp.add_argument("--lambda", dest="lam", type=_lambda, default=("auto", None))
    sp.add_argument("--alpha", type=_alpha, default=0.5)
    sp.add_argument("--en-lambda", type=_nonneg, default=None)
    sp.add_argument("--folds", type=_positive_int, default=5)
    sp.add_argument("--out", required=True, help="report JSON")
    sp.add_argument("--csv", help="per-replication CSV")
    common(sp)
    sp.set_defaults(handler=cmd_compare)

    sp = sub.add_parser("check-theory", help="lemma batch, bound lattice and bound value")
    sp.add_argument("--instances", type=_positive_int, default=50)
    sp.add_argument("--n", type=_positive_int, default=30)
    sp.add_argument("--t", type=_positive_int, default=30)
    sp.add_argument("--pc", type=_probability, default=1.0, help="control probability for the bound, in (0, 1]")
    sp.add_argument("--sigma", type=_nonneg, default=1.0)
    sp.add_argument("--json", action="store_true", help="print a machine-readable summary")
    common(sp)
    sp.set_defaults(handler=cmd_check_theory)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> tuple[argparse.Namespace, dict]:
    """Parse twice: once to find ``--config`` and the subcommand, then with
    the file's values as defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args, {}
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        parser.error(f"cannot read config: {exc}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        dest = "lam" if dest == "lambda" else dest
        if dest not in known or dest in ("panel", "config", "help"):
            parser.error(f"config key {key!r} is not an option of {args.command}")
        action = known[dest]
        try:
            defaults[dest] = action.type(value) if action.type else (value.lower() in ("1", "true", "yes"))
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv), cfg


def _echo(args: argparse.Namespace, cfg: dict) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_ECHOED or v is None:
            continue
        if isinstance(v, tuple) and k == "lam":
            v = v[0] if v[1] is None else f"{v[0]}:{v[1]!r}"
        elif k == "panel":
            v = Path(v).name
        out[k] = v
    if cfg:
        out["config_file"] = dict(sorted(cfg.items()))
    return json.loads(json.dumps(out))


def _spec(kind: str, args) -> EstimatorSpec:
    if kind in ("hr_en", "vt_en"):
        return EstimatorSpec(kind, en_config=EnConfig(lam=args.en_lambda, alpha=args.alpha, n_folds=args.folds))
    if kind == "mc_nnm":
        mode, value = args.lam
        cfg = McnnmConfig(tol=getattr(args, "tol", 1e-6), max_iter=getattr(args, "max_iter", 500))
        cv = CvConfig(n_folds=args.folds, seed=args.seed) if mode == "auto" else None
        return EstimatorSpec(
            kind, cv=cv, mcnnm=cfg, lam=value if mode == "fixed" else None, lam_scale=value if mode == "scaled" else None
        )
    return EstimatorSpec(kind)


def _write_json(doc, path) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_impute(args, cfg) -> int:
    panel = load_panel_csv(args.panel)
    spec = _spec(args.estimator, args)
    log.info("fitting %s on %d x %d panel with %d missing cells", spec.name, *panel.y.shape, panel.mask.n_missing)
    est = run_estimator(panel.y, panel.mask, spec, seed=args.seed, workers=args.workers)
    completed = np.where(panel.mask.observed, panel.y, est.completed)
    if not np.all(np.isfinite(completed)):
        raise FloatingPointError("non-finite values in the completed panel")
    n, t = completed.shape
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["unit", "time", "outcome", "imputed"])
        for i in range(n):
            for s in range(t):
                w.writerow([panel.units[i], panel.times[s], repr(float(completed[i, s])), int(panel.mask.missing[i, s])])
    if args.meta:
        meta = {"estimator": spec.name, "lambda": None, "effective_rank": None, "n_iter": None, "converged": None}
        meta.update({k: v for k, v in est.meta.items() if k != "weights"})
        if "weights" in est.meta:
            meta["weights"] = {panel.units[i]: w for i, w in sorted(est.meta["weights"].items())}
        meta["lambda"] = meta.pop("lam", None)
        meta["config_echo"] = _echo(args, cfg)
        _write_json(meta, args.meta)
    return 0


def cmd_cv(args, cfg) -> int:
    panel = load_panel_csv(args.panel)
    res = cross_validate(panel.y, panel.mask, CvConfig(n_folds=args.folds, seed=args.seed), workers=args.workers)
    doc = {
        "lambda": res.lam,
        "grid": [float(x) for x in res.lambdas],
        "mean_mse": [float(x) for x in res.mean_mse],
        "subset_size": int(res.subset_size),
        "seed": args.seed,
        "config_echo": _echo(args, cfg),
    }
    _write_json(doc, args.out)
    return 0


def cmd_simulate(args, cfg) -> int:
    l_star, y = generate_synthetic(_make_synthetic(args.synthetic, args.seed))
    n, t = y.shape
    mask = ObservationMask(np.ones((n, t), bool))
    if args.plan:
        mask = make_pseudo_masks(PseudoTreatmentPlan(seed=args.seed, **args.plan), n, t)[0]
    write_panel_csv(args.out, y, mask)
    if args.truth:
        write_panel_csv(args.truth, l_star, ObservationMask(np.ones((n, t), bool)))
    return 0


def cmd_compare(args, cfg) -> int:
    if args.synthetic is not None:
        _, y = generate_synthetic(_make_synthetic(args.synthetic, args.seed))
    else:
        panel = load_panel_csv(args.panel)
        if panel.mask.n_missing:
            raise InfeasibleError(
                f"compare needs a fully observed panel; {panel.mask.n_missing} cells are missing or treated"
            )
        y = panel.y
    specs = [_spec(k, args) for k in args.estimators]
    echo = _echo(args, cfg)
    base = dict(args.plan)
    points = [({}, base)]
    if args.sweep:
        key, values = args.sweep
        name = _PLAN_KEYS[key][0]
        points = [({key: v}, {**base, name: v}) for v in values]
    reports = []
    for labels, plan_kw in points:
        plan = PseudoTreatmentPlan(replications=args.reps, seed=args.seed, **plan_kw)
        log.info("plan %s: %d replications", labels or plan.mode, plan.replications)
        reports.append((labels, run_comparison(y, plan, specs, workers=args.workers, config_echo=echo)))
    write_report(reports if args.sweep else reports[0][1], args.out, args.csv)
    for labels, rep in reports:
        for e in rep.estimators:
            tag = " ".join(f"{k}={v}" for k, v in labels.items())
            mean = "skipped" if e.mean_rmse is None else f"{e.mean_rmse:.6g}"
            log.info("%s %s mean_rmse=%s n_reps=%d skipped=%d", tag, e.name, mean, e.n_reps, e.skipped)
    return 0


def cmd_check_theory(args, cfg) -> int:
    results = run_lemma_suite(n_instances=args.instances, n=args.n, t=args.t, seed=args.seed)
    counts = {s: sum(r.status == s for r in results) for s in ("holds", "fails", "not_applicable")}
    ratios = [r.lhs / r.rhs for r in results if r.rhs > 0]
    violations = monotonicity_lattice()
    bound_cfg = TheoremBoundConfig(sigma=args.sigma, p_c=args.pc)
    doc = {
        "lemma": {"instances": len(results), **counts, "max_ratio": max(ratios) if ratios else None},
        "lattice": {"violations": violations},
        "bound": {"n": args.n, "t": args.t, "p_c": args.pc, "sigma": args.sigma,
                  "value": theorem_bound(bound_cfg, args.n, args.t)},
        "passed": counts["holds"] == len(results) and not violations,
    }
    if args.json:
        _write_json(doc, None)
    else:
        print(f"lemma: {counts['holds']}/{len(results)} hold, {counts['fails']} fail, "
              f"{counts['not_applicable']} not applicable")
        print(f"lattice: {len(violations)} violation(s)")
        print(f"bound(n={args.n}, t={args.t}, p_c={args.pc}, sigma={args.sigma}) = {doc['bound']['value']:.6g}")
        print("PASS" if doc["passed"] else "FAIL")
    return 0 if doc["passed"] else 2


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, cfg = _apply_config(parser, argv)
    except ParseError as exc:
        print(f"mcpanel: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.handler(args, cfg)
    except ParseError as exc:
        print(f"mcpanel: error: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleError, PanelError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"mcpanel: cannot complete {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mcpanel: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
