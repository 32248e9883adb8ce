"""Command line entry point: ``latred run | compare | svd | scenarios``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import LatredError, ScenarioError
from .pod import compute_pod_basis, svd_truncation_error
from .runner import compare, run, summary, write_error, write_outputs
from .scenario import MODES, bundled_path, bundled_scenarios, load_scenario

log = logging.getLogger("latred")

EXIT_USAGE = 2
EXIT_SOLVER = 3


def _setup_logging():
    level = os.environ.get("LATRED_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _apply_overrides(scn, args):
    s = scn.sections
    if args.mode:
        scn.mode = args.mode
    for flag, sec, key in (("nc", "pod", "n_c"), ("eps_svd", "pod", "eps"), ("rho_s", "split", "rho_s"),
                           ("kdam", "split", "k_dam"), ("klocglo", "split", "k_locglo"),
                           ("eta_global", "policy", "eta_global"), ("eta_reduced", "policy", "eta_reduced"),
                           ("increments", "control", "n_increments"), ("newton_tol", "control", "newton_tol"),
                           ("cg_tol", "solver", "cg_tol"), ("delta_d", "control", "delta_d_max")):
        v = getattr(args, flag)
        if v is not None:
            s[sec][key] = v
    if args.nc is not None:
        s["pod"]["eps"] = None
    if args.eps_svd is not None:
        s["pod"]["n_c"] = None
    if args.compare_unaugmented:
        s["solver"]["compare_unaugmented"] = True
    if scn.mode != "full" and s["pod"]["snapshot"] is None and args.snapshot is None:
        raise ScenarioError(f"mode {scn.mode} needs a snapshot (--snapshot or pod.snapshot)")


def _scenario_path(value):
    p = Path(value)
    return p if p.exists() or p.suffix == ".json" else bundled_path(value)


def cmd_run(args):
    try:
        scn = load_scenario(_scenario_path(args.scenario))
        _apply_overrides(scn, args)
    except LatredError as exc:
        write_error(args.out, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(args.threads):
                result = run(scn, args.snapshot)
        else:
            result = run(scn, args.snapshot)
    except (LatredError, np.linalg.LinAlgError) as exc:
        path = write_error(args.out, exc)
        inc = getattr(exc, "increment", None)
        where = f" at increment {inc}" if inc is not None else ""
        print(f"error{where}: {exc} (see {path})", file=sys.stderr)
        return EXIT_SOLVER
    out = write_outputs(result, args.out)
    s = summary(result)
    print(f"{s['name']} [{s['mode']}]: {s['increments']} increments, "
          f"peak load {s.get('peak_load', float('nan')):.6g} at increment {s.get('peak_increment', '-')}, "
          f"outputs in {out}")
    return 0


def cmd_compare(args):
    try:
        rep = compare(args.run_a, args.run_b)
    except (LatredError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        io.write_table(args.out, list(rep), [rep])
    print(f"peak load: {rep['peak_a']:.6g} vs {rep['peak_b']:.6g} ({rep['peak_error_pct']:+.3f} %)")
    print(f"curve L2 distance over {rep['increments']} increments: {rep['curve_l2']:.3e} "
          f"(relative {rep['curve_rel_l2']:.3e})")
    print(f"CG iterations: {rep['cg_iterations_a']} vs {rep['cg_iterations_b']}; "
          f"corrections: {rep['corrections_a']} vs {rep['corrections_b']}")
    return 0


def cmd_svd(args):
    try:
        S = io.read_matrix(args.snapshot)
    except (LatredError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    full = compute_pod_basis(S)
    print("n_c,lambda,nu_svd")
    for k in range(0, full.n_c + 1):
        b = compute_pod_basis(S, n_c=k) if k else None
        nu = svd_truncation_error(b) if b else 1.0
        lam = float(full.lambdas[k - 1]) if k else float("nan")
        print(f"{k},{lam!r},{nu!r}")
    if args.nc is not None or args.eps_svd is not None:
        b = compute_pod_basis(S, n_c=args.nc, eps=args.eps_svd)
        print(f"# selected n_c={b.n_c}, nu_svd={svd_truncation_error(b):.6e}")
        if args.out:
            io.write_matrix(args.out, b.C)
    return 0


def cmd_scenarios(args):
    for name in bundled_scenarios():
        print(name)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="latred", description="Local/global reduced solver for damageable lattices")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", required=True, help="scenario JSON file or bundled scenario name")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--snapshot", help="LRMAT1 snapshot matrix (overrides pod.snapshot)")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--nc", type=int, help="POD truncation order")
    g.add_argument("--eps-svd", type=float, help="POD eigenvalue ratio cutoff")
    r.add_argument("--rho-s", type=float)
    r.add_argument("--kdam", type=float)
    r.add_argument("--klocglo", type=float)
    r.add_argument("--eta-global", type=float)
    r.add_argument("--eta-reduced", type=float)
    r.add_argument("--increments", type=int)
    r.add_argument("--delta-d", type=float, help="damage increment per step")
    r.add_argument("--newton-tol", type=float)
    r.add_argument("--cg-tol", type=float)
    r.add_argument("--threads", type=int, help="limit BLAS threads")
    r.add_argument("--compare-unaugmented", action="store_true",
                   help="also solve each condensed system without augmentation and record the count")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", help="write the report as CSV")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("svd", help="POD spectrum of a snapshot matrix")
    s.add_argument("--snapshot", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--nc", type=int)
    g.add_argument("--eps-svd", type=float)
    s.add_argument("--out", help="write the selected basis (LRMAT1)")
    s.set_defaults(func=cmd_svd)

    sc = sub.add_parser("scenarios", help="list bundled scenarios")
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
