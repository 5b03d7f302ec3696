"""Command line entry point: one subcommand per experiment group.

Every run writes its data files plus ``manifest.json`` into ``--out``.
The manifest echoes the full configuration and the verdict of each check;
the exit status is 0 exactly when all checks pass. Numerical failures
write ``error.json`` and exit with status 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fixpoint import FixedPointNotConverged, iterate_fixpoint
from .matching import estimate_scaled_cost, extrapolate_beta, parisi_reference
from .randomness import Params, SeedSpec
from .reports import MC_HEADER, NORM_SWEEP_HEADER, write_csv, write_grid_function, write_json
from . import validation as V


def _common(p: argparse.ArgumentParser, **defaults):
    p.add_argument("--seed", type=int, default=defaults.get("seed", 1))
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudomatch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixpoint", help="iterate the game-value map, write F_A and F_B")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--grid", type=int, default=2048)
    p.add_argument("--tol", type=float, default=1e-8)
    _common(p)

    p = sub.add_parser("norm-sweep", help="||L_B o L_A|| and I endpoint values over (q, lambda, N)")
    p.add_argument("--q", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    p.add_argument("--grid", type=int, nargs="+", default=[1024, 2048])
    p.add_argument("--tol", type=float, default=1e-8)
    _common(p)

    p = sub.add_parser("mc-matching", help="Monte Carlo of the scaled minimum matching cost")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    _common(p)

    p = sub.add_parser("beta", help="extrapolate the scaled optimum in 1/n (uncertified)")
    p.add_argument("--q", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--n", type=int, nargs="+", default=[50, 100, 200, 400])
    p.add_argument("--samples", type=int, default=400)
    _common(p)

    p = sub.add_parser("tree-uniqueness", help="root gap f_B - f_A versus truncation depth")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--depth", type=int, nargs="+", default=[4, 8, 12])
    p.add_argument("--samples", type=int, default=200)
    _common(p)

    p = sub.add_parser("tree-distribution", help="tree-simulated game values against F_A")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.5)
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--samples", type=int, default=3000)
    p.add_argument("--grid", type=int, default=1024)
    _common(p)

    p = sub.add_parser("reasonable-size", help="sizes of reasonable subtrees against the majorant")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--t-budget", dest="t", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--k", type=int, nargs="+", default=[4, 8, 12])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--grid", type=int, default=1024)
    _common(p)

    p = sub.add_parser("validate-all", help="run every acceptance check")
    _common(p)
    return ap


def _check(name, passed, **detail):
    return {"name": name, "passed": bool(passed), **detail}


def cmd_fixpoint(a):
    fp = iterate_fixpoint(Params(a.q, a.lam), N=a.grid, tol=a.tol)
    meta = {"iterations": fp.iterations, "tol": a.tol, "residual": fp.residual}
    write_grid_function(a.out / "F_A.csv", fp.F_A, meta)
    write_grid_function(a.out / "F_B.csv", fp.F_B, meta)
    summary = {"iterations": fp.iterations, "residual": fp.residual,
               "sup_FA_minus_FB": float(np.abs(fp.F_A.values - fp.F_B.values).max())}
    return [_check("converged", fp.converged), _check("residual_below_2tol", fp.residual < 2 * a.tol)], summary


def cmd_norm_sweep(a):
    rows = [V.norm_sweep_row(q, lam, N, a.tol) for q in a.q for lam in a.lam for N in a.grid]
    write_csv(a.out / "norm_sweep.csv", NORM_SWEEP_HEADER, [[r[k] for k in NORM_SWEEP_HEADER] for r in rows])
    checks = [_check("norm_in_unit_interval", all(0.0 < r["norm"] < 1.0 for r in rows))]
    if len(a.grid) > 1:
        worst = 0.0
        for q in a.q:
            for lam in a.lam:
                norms = [r["norm"] for r in rows if r["q"] == q and r["lambda"] == lam]
                worst = max(worst, abs(norms[-1] / norms[0] - 1.0))
        checks.append(_check("grid_refinement_below_1pct", worst < 0.01, max_relative_change=worst))
    return checks, {"pairs": len(a.q) * len(a.lam)}


def cmd_mc_matching(a):
    seed = SeedSpec(a.seed)
    rows, checks = [], []
    for n in a.n:
        mean, se = estimate_scaled_cost(n, a.q, a.samples, seed, a.jobs)
        rows.append([a.q, n, a.samples, mean, se, a.seed])
        if a.q == 1.0:
            ref = parisi_reference(n)
            checks.append(_check(f"parisi_n{n}", abs(mean - ref) <= 3 * se, reference=ref,
                                 z=(mean - ref) / se))
    write_csv(a.out / "mc_matching.csv", MC_HEADER, rows)
    return checks, {"rows": len(rows)}


def cmd_beta(a):
    seed = SeedSpec(a.seed)
    rows, fits = [], []
    for q in a.q:
        est = extrapolate_beta(q, a.n, a.samples, seed, a.jobs)
        rows.extend([q, n, s, m, e, a.seed] for n, m, e, s in est.per_n)
        fits.append([q, est.extrapolated, est.uncertainty, est.slope])
    write_csv(a.out / "beta_points.csv", MC_HEADER, rows)
    write_csv(a.out / "beta_fit.csv", ["q", "beta", "uncertainty", "slope"], fits)
    return [], {"model": "mean(n) = beta + b/n, weighted least squares", "certified": False}


def _result_checks(res: V.CheckResult, path: Path):
    write_json(path, {"name": res.name, "passed": res.passed, "detail": res.detail})
    return [_check(res.name, res.passed)]


def cmd_tree_uniqueness(a):
    res = V.check_uniqueness(Params(a.q, a.lam), a.samples, tuple(a.depth), SeedSpec(a.seed))
    return _result_checks(res, a.out / "tree_uniqueness.json"), {}


def cmd_tree_distribution(a):
    res = V.check_distribution(Params(a.q, a.lam), a.samples, a.depth, a.grid, SeedSpec(a.seed))
    return _result_checks(res, a.out / "tree_distribution.json"), {}


def cmd_reasonable_size(a):
    if any(k % 2 for k in a.k):
        raise ValueError("--k values must be even")
    res = V.check_reasonable(Params(a.q, a.lam), a.samples, tuple(a.k), tuple(a.t),
                             N=a.grid, seed=SeedSpec(a.seed))
    header = ["t", "k", "center", "count", "R", "ci_high", "psi"]
    write_csv(a.out / "reasonable_size.csv", header, [[b[h] for h in header] for b in res.detail["bins"]])
    return _result_checks(res, a.out / "reasonable_size.json"), {}


def cmd_validate_all(a):
    results = V.run_all(seed=a.seed, jobs=a.jobs)
    write_json(a.out / "validation.json",
               [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results])
    return [_check(r.name, r.passed) for r in results], {}


COMMANDS = {
    "fixpoint": cmd_fixpoint,
    "norm-sweep": cmd_norm_sweep,
    "mc-matching": cmd_mc_matching,
    "beta": cmd_beta,
    "tree-uniqueness": cmd_tree_uniqueness,
    "tree-distribution": cmd_tree_distribution,
    "reasonable-size": cmd_reasonable_size,
    "validate-all": cmd_validate_all,
}


def _config(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k != "out"}


def _validate(a, parser) -> None:
    if a.jobs < 1:
        parser.error("--jobs must be at least 1")
    if not 0 <= a.seed < 2**64:
        parser.error("--seed must be a non-negative 64-bit integer")
    qs = a.q if isinstance(getattr(a, "q", None), list) else [getattr(a, "q", 1.0)]
    lams = a.lam if isinstance(getattr(a, "lam", None), list) else [getattr(a, "lam", 1.0)]
    try:
        for q in qs:
            for lam in lams:
                Params(q, lam)
    except ValueError as exc:
        parser.error(str(exc))
    for name in ("samples", "grid", "n", "depth"):
        vals = getattr(a, name, None)
        vals = vals if isinstance(vals, list) else [vals]
        if any(v is not None and v < 1 for v in vals):
            parser.error(f"--{name} values must be positive")
    if getattr(a, "tol", 1.0) <= 0:
        parser.error("--tol must be positive")
    if any(t < 0 for t in getattr(a, "t", [])):
        parser.error("--t-budget values must be non-negative")


def run(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    _validate(a, parser)
    a.out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "command": a.command, "config": _config(a)}
    try:
        checks, summary = COMMANDS[a.command](a)
    except (FixedPointNotConverged, ArithmeticError, ValueError, FloatingPointError) as exc:
        write_json(a.out / "error.json", {"command": a.command, "error": type(exc).__name__,
                                          "message": str(exc)})
        manifest.update({"checks": [], "passed": False, "error": type(exc).__name__})
        write_json(a.out / "manifest.json", manifest)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    passed = all(c["passed"] for c in checks)
    manifest.update({"checks": checks, "summary": summary, "passed": passed})
    write_json(a.out / "manifest.json", manifest)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    return 0 if passed else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
