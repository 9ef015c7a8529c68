"""Command line interface: ``trunccox fit | simulate | test-independence | scenarios``.

Exit codes are 0 on success, 2 for invalid input and 3 for numerical
failure. Errors are written to stderr as one JSON object.

Reports are deterministic given the inputs and flags: they contain no
timestamps. Each output file gets a ``*.manifest.json`` sidecar with the
full flag set, input digest, library version and wall-clock times.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import NEG_INF_TOKEN, POS_INF_TOKEN, Schema, load_dataset
from .em_truncation import ALPHA_FORMS, TIES, EMConfig
from .errors import NumericalError, TruncCoxError, ValidationError
from .estimators import ESTIMATORS, fit_estimator
from .inference import bootstrap, conditional_kendall_tau

REPORT_FORMAT_VERSION = 1

log = logging.getLogger("trunccox")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _clean(v):
    """JSON-safe copy: numpy scalars and arrays to Python, NaN and inf to None."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _write_manifest(path: Path, args, command: str, started: str, input_digest=None, outputs=()):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "format_version": REPORT_FORMAT_VERSION,
        "command": command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "input_digest": input_digest,
        "outputs": [str(o) for o in outputs],
        "started": started,
        "finished": _now(),
    }
    path.write_text(_dump(manifest), encoding="utf-8")


def _emit(report: dict, output, args, command, started, digest=None):
    if output is None:
        sys.stdout.write(_dump(report))
        return
    out = Path(output)
    report["manifest"] = out.name + ".manifest.json"
    out.write_text(_dump(report), encoding="utf-8")
    _write_manifest(out.with_name(out.name + ".manifest.json"), args, command, started, digest, [out.name])


def _load(args):
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    schema = Schema(args.time_col, args.left_col, args.right_col, covs)
    return load_dataset(args.input, schema, (args.neg_inf, args.pos_inf), args.skip_invalid)


def _em_config(args) -> EMConfig:
    return EMConfig(epsilon=args.epsilon, max_iter=args.max_iter, alpha_form=args.alpha_form, ties=args.ties)


# -- fit -------------------------------------------------------------------------------------------


def _baseline(res):
    fit = res.fit
    if res.name == "em":
        times, jumps = fit.times, fit.lam
    else:
        times, jumps = fit.baseline_times, fit.baseline
    return {"times": times, "jumps": jumps, "cumulative": np.cumsum(jumps)}


def cmd_fit(args) -> int:
    started = _now()
    ds = _load(args)
    cfg = _em_config(args)
    res = fit_estimator(args.method, ds, em_config=cfg)
    beta = np.asarray(res.beta, dtype=float)
    names = list(ds.covariate_names)
    diag = {"method": args.method}
    if res.name == "em":
        diag.update(iterations=res.fit.iterations, converged=res.fit.converged, loglik=res.fit.loglik,
                    alpha_min=float(np.min(res.fit.alpha)), alpha_form=cfg.alpha_form, ties=cfg.ties,
                    epsilon=cfg.epsilon)
    else:
        diag.update(iterations=res.fit.iterations, converged=res.fit.converged, loglik=res.fit.loglik)
        if res.name == "weighted":
            diag.update(pi_min=float(res.extra.pi.min()), selection_iterations=res.extra.iterations)
    if args.bootstrap > 0:
        boot = bootstrap(ds, args.method, args.bootstrap, args.seed, original=res, em_config=cfg,
                         workers=args.threads)
        se = boot.se
        diag["bootstrap"] = {"B": args.bootstrap, "seed": args.seed, "failures": boot.failures}
    else:
        se = np.full(beta.size, np.nan)
    coefs = []
    for j, name in enumerate(names):
        s = float(se[j])
        z = beta[j] / s if s > 0 else float("nan")
        coefs.append({
            "name": name,
            "estimate": float(beta[j]),
            "se": s,
            "z": z,
            "p_value": math.erfc(abs(z) / math.sqrt(2)) if math.isfinite(z) else float("nan"),
            "ci_lower": float(beta[j] - 1.959963984540054 * s),
            "ci_upper": float(beta[j] + 1.959963984540054 * s),
        })
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "command": "fit",
        "version": __version__,
        "input_digest": ds.digest(),
        "n": ds.n,
        "p": ds.p,
        "truncation": ds.mode,
        "skipped_rows": [r for r, _ in ds.skipped],
        "coefficients": coefs,
        "baseline": _baseline(res),
        "diagnostics": diag,
    }
    _emit(report, args.output, args, "fit", started, ds.digest())
    return 0


# -- simulate ----------------------------------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse {text!r} as a comma-separated list of numbers") from None


def cmd_simulate(args) -> int:
    from .simulation import read_scenario, run_study, write_long_csv, write_reports

    started = _now()
    sc = read_scenario(args.scenario)
    kw = {}
    if args.reps is not None:
        kw["reps"] = args.reps
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.n is not None:
        kw["n"] = args.n
    if kw:
        sc = replace(sc, **kw)
    estimators = [e.strip() for e in args.estimators.split(",")] if args.estimators else list(sc.estimators)
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    B = sc.bootstrap_B if args.bootstrap is None else args.bootstrap
    cfg = _em_config(args)
    if args.grid_left or args.grid_right:
        lefts = _floats(args.grid_left) if args.grid_left else [sc.target_left]
        rights = _floats(args.grid_right) if args.grid_right else [sc.target_right]
    else:
        lefts, rights = [sc.target_left], [sc.target_right]
    cells = []
    for tl in lefts:
        for tr in rights:
            cell = sc
            if (tl, tr) != (sc.target_left, sc.target_right):
                cell = replace(sc, target_left=tl, target_right=tr, c_l=None, c_r=None,
                               name=f"{sc.name}_L{tl:g}_R{tr:g}")
            log.info("running %s", cell.name)
            rep = run_study(cell, estimators, B, em_config=cfg, workers=args.threads)
            cells.append((tl, tr, rep))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports([c[2] for c in cells], out / "report.csv")
    write_long_csv(cells, out / "figure_long.csv")
    _write_manifest(out / "manifest.json", args, "simulate", started, None, ["report.csv", "figure_long.csv"])
    if not args.quiet:
        sys.stdout.write((out / "report.csv").read_text(encoding="utf-8"))
    return 0


# -- test-independence -----------------------------------------------------------------------------------


def cmd_test_independence(args) -> int:
    started = _now()
    ds = _load(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # the notes are carried in the report
        res = conditional_kendall_tau(ds, args.permutations, args.seed)
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "command": "test-independence",
        "version": __version__,
        "input_digest": ds.digest(),
        "n": ds.n,
        "tau_L": res.tau[0],
        "tau_R": res.tau[1],
        "p_value": res.p_value,
        "comparable_pairs": res.comparable_pairs[0],
        "permutations": res.permutations,
        "seed": args.seed,
        "warnings": list(res.warnings),
    }
    for msg in res.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    _emit(report, args.output, args, "test-independence", started, ds.digest())
    return 0


def cmd_scenarios(args) -> int:
    from .simulation import bundled_scenarios

    for name in bundled_scenarios():
        print(name)
    return 0


# -- parser --------------------------------------------------------------------------------------------


def _add_input(p):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--time-col", default="time")
    p.add_argument("--left-col", default="left")
    p.add_argument("--right-col", default="right")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: z1, z2, ...)")
    p.add_argument("--neg-inf", default=NEG_INF_TOKEN, help="token for minus infinity")
    p.add_argument("--pos-inf", default=POS_INF_TOKEN, help="token for plus infinity")
    p.add_argument("--skip-invalid", action="store_true", help="drop rows violating left <= time <= right")


def _add_em(p):
    p.add_argument("--epsilon", type=float, default=1e-6, help="EM stopping threshold")
    p.add_argument("--max-iter", type=int, default=2000, help="EM iteration cap")
    p.add_argument("--alpha-form", choices=ALPHA_FORMS, default="support")
    p.add_argument("--ties", choices=TIES, default="breslow")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trunccox", description="Cox regression for truncated survival data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one estimator, with bootstrap standard errors")
    _add_input(p)
    p.add_argument("--method", choices=ESTIMATORS, default="em")
    p.add_argument("--bootstrap", type=int, default=200, metavar="B", help="resamples (0 disables)")
    p.add_argument("--seed", type=int, default=0)
    _add_em(p)
    p.add_argument("--threads", type=int, default=1, help="worker processes for the bootstrap")
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a scenario file")
    p.add_argument("scenario", help="scenario .ini file or bundled scenario name")
    p.add_argument("--estimators", help="comma-separated estimators (default: from the scenario)")
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int, help="observed sample size")
    p.add_argument("--bootstrap", type=int, metavar="B")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-left", help="left truncation targets, e.g. 0.1,0.25,0.4")
    p.add_argument("--grid-right", help="right truncation targets")
    _add_em(p)
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("test-independence", help="conditional Kendall's tau permutation test")
    _add_input(p)
    p.add_argument("--permutations", type=int, default=999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.set_defaults(func=cmd_test_independence)

    p = sub.add_parser("scenarios", help="list bundled scenario files")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except TruncCoxError as exc:
        print(json.dumps(_clean(exc.to_dict())), file=sys.stderr)
        return 3 if isinstance(exc, NumericalError) else 2
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
