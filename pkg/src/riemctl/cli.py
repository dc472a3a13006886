"""Command line entry points: geometry checks, scenario runs, condition slices, slope sweeps.

Exit codes: 0 when every verdict holds, 1 on a violation, 2 when any check
is inconclusive, 3 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import scenarios as scn
from .reports import (ReportBundle, VERDICT_HOLDS, VERDICT_INCONCLUSIVE, VERDICT_VIOLATED,
                      canonical_json)

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_INCONCLUSIVE = 2
EXIT_USAGE = 3

_CHARTS = {
    "euclidean": lambda: geo.euclidean_chart(2),
    "euclidean1": lambda: geo.euclidean_chart(1),
    "sphere": geo.sphere_chart,
    "hyperbolic": lambda: geo.hyperbolic_chart(1.0),
}


def _build_parser():
    p = argparse.ArgumentParser(prog="riemctl",
                                description="Optimality-condition verification on Riemannian charts")
    p.add_argument("--step", type=float, default=None, help="integrator step override")
    p.add_argument("--fd-step", type=float, default=None, help="finite-difference step override")
    p.add_argument("--tol", type=float, default=None, help="tolerance override for check verdicts")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--out", type=str, default=None,
                   help="output directory (default RIEMCTL_OUT or ./riemctl_out)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("geometry-check", help="run the chart verification suite")
    g.add_argument("chart", choices=sorted(_CHARTS))
    for name in ("run", "necessary-check", "sufficient-check", "endpoint-check", "slopes"):
        s = sub.add_parser(name)
        s.add_argument("scenario", help="scenario JSON file")
    return p


def _out_dir(args) -> Path:
    if args.out:
        base = Path(args.out)
    else:
        base = Path(os.environ.get("RIEMCTL_OUT", "riemctl_out"))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _load_spec(path, args):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise scn.ScenarioError(f"cannot read scenario file: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise scn.ScenarioError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    spec = scn.ScenarioSpec.from_dict(doc)
    if args.step is not None:
        spec.step = float(args.step)
    if args.fd_step is not None:
        spec.fd_step = float(args.fd_step)
    if args.seed is not None:
        spec.seed = int(args.seed)
    return spec


def _emit(bundle: ReportBundle, args, stem: str) -> Path:
    out = _out_dir(args)
    if args.format == "csv":
        path = out / f"{stem}.csv"
        path.write_text(bundle.to_csv(), encoding="utf-8")
    else:
        path = out / f"{stem}.json"
        path.write_text(bundle.to_json(), encoding="utf-8")
    return path


def _exit_from_verdict(verdict: str) -> int:
    return {VERDICT_HOLDS: EXIT_OK, VERDICT_VIOLATED: EXIT_VIOLATED,
            VERDICT_INCONCLUSIVE: EXIT_INCONCLUSIVE}[verdict]


def _geometry_check(args) -> int:
    from .suite import geometry_suite

    chart = _CHARTS[args.chart]()
    seed = args.seed if args.seed is not None else 0
    reports = geometry_suite(chart, seed=seed)
    bundle = ReportBundle(name=f"geometry_{args.chart}",
                          scenario={"command": "geometry-check", "chart": args.chart,
                                    "seed": seed})
    bundle.geometry_checks = [
        {"check": r.check, "value": r.value, "tol": r.tol, "passed": r.passed,
         "details": r.details} for r in reports]
    path = _emit(bundle, args, f"geometry_{args.chart}")
    ok = all(r.passed for r in reports)
    for r in reports:
        flag = "PASS" if r.passed else "FAIL"
        print(f"[{flag}] {r.check}: value={r.value:.6g} tol={r.tol:g}")
    print(f"report: {path}")
    return EXIT_OK if ok else EXIT_VIOLATED


def _filter_conditions(bundle: ReportBundle, keep_ids) -> ReportBundle:
    bundle.conditions = [c for c in bundle.conditions if c.id in keep_ids]
    return bundle


_SLICES = {
    "necessary-check": {"max_principle_excess", "pointwise_necessary", "integral_necessary",
                        "stationarity_residual", "second_variation_energy"},
    "sufficient-check": {"sufficient_margin_scan"},
    "endpoint-check": {"endpoint_hessian", "multiplier_corank_one", "stationarity_residual",
                       "geodesic_residual"},
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        if args.command == "geometry-check":
            return _geometry_check(args)
        spec = _load_spec(args.scenario, args)
        if args.command == "slopes":
            bundle = scn.run_scenario(spec, include_slopes=True)
            path = _emit(bundle, args, f"{spec.name}_slopes")
            print(f"report: {path}")
            for table, rep in bundle.slope_tables.items():
                for key, val in rep.items():
                    if key.startswith("slope"):
                        print(f"{table}.{key} = {val:.3f}")
            return _exit_from_verdict(bundle.worst_verdict)
        bundle = scn.run_scenario(spec)
        if args.command in _SLICES:
            _filter_conditions(bundle, _SLICES[args.command])
        if args.tol is not None:
            for c in bundle.conditions:
                c.tol = float(args.tol)
                c.verdict = VERDICT_HOLDS if c.value <= c.tol else VERDICT_VIOLATED
        path = _emit(bundle, args, f"{spec.name}_{args.command.replace('-', '_')}")
        for c in bundle.conditions:
            print(f"[{c.verdict}] {c.id}: value={c.value:.6g} tol={c.tol:g}")
        if bundle.trajectory_summary:
            print(f"cost: {bundle.trajectory_summary.get('cost'):.9g}")
        print(f"report: {path}")
        return _exit_from_verdict(bundle.worst_verdict)
    except scn.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except geo.GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
