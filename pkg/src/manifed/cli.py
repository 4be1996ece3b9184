"""Command line interface.

Subcommands: synth (generate a dataset container), reference (attach the
optimum), run (a single federated run), sweep (a K x seed experiment), and
check (randomized property checks). Exit codes: 0 success, 2 bad parameters,
3 malformed data, 4 domain error, 5 run failure, 6 other package error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checks import run_all_checks
from .engine import RunConfig, run_federated
from .errors import (
    DataFormatError,
    DomainError,
    ManifedError,
    ParameterError,
    RunError,
)
from .harness import (
    ExperimentSpec,
    add_reference_to_container,
    run_experiment,
    trace_filename,
    write_trace_csv,
    _extra_metrics_for,
)
from .problems import MAKERS, load_problem, save_problem
from .solvers import SolverConfig

EXIT_CODES = (
    (ParameterError, 2),
    (DataFormatError, 3),
    (DomainError, 4),
    (RunError, 5),
    (ManifedError, 6),
)


def _cmd_synth(args):
    kwargs = {"S": args.agents, "N": args.samples, "seed": args.seed}
    if args.problem == "cpesph":
        kwargs.update(d=args.d, eigengap=args.eigengap)
    elif args.problem == "cfmspd":
        kwargs.update(n=args.n, diameter=args.diameter)
    elif args.problem == "mbcfsti":
        kwargs.update(d=args.d, p=args.p)
    else:
        kwargs.update(m=args.m, r=args.r, noise_std=args.noise_std,
                      lam=args.lam, d_range=(args.d_min, args.d_max))
    problem = MAKERS[args.problem](**kwargs)
    save_problem(problem, args.out)
    print(f"wrote {args.problem} dataset ({problem.S} agents x {problem.N} samples) to {args.out}")
    return 0


def _cmd_reference(args):
    solver = SolverConfig(max_iters=args.max_iters, grad_tol=args.grad_tol)
    reference = add_reference_to_container(
        args.data, out=args.out, seed=args.seed, solver=solver
    )
    print(f"reference value {reference['f_star']!r} "
          f"(rsd excess {reference['rsd_excess']!r}) stored in {args.out or args.data}")
    return 0


def _load_run_config(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(payload)


def _cmd_run(args):
    problem, reference = load_problem(args.data)
    config = _load_run_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    f_star = reference.get("f_star")
    if f_star is None and problem.reference_value() is not None:
        f_star = problem.reference_value()
    spec_like = argparse.Namespace(per_round_nmse=False)
    trace, final = run_federated(
        problem, config, f_star=f_star,
        extra_metrics=_extra_metrics_for(problem, spec_like),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / trace_filename(problem.kind, config.K, config.seed)
    write_trace_csv(trace, path, timing=args.timing)
    final_cost = trace[-1].cost if trace else problem.objective(final)
    print(f"wrote {path} ({len(trace)} rounds, final F={final_cost!r})")
    return 0


def _cmd_sweep(args):
    spec = ExperimentSpec.from_json(args.spec)
    report = run_experiment(spec, timing=args.timing)
    failures = sum(1 for row in report.rows if row.error)
    print(f"wrote {len(report.trace_paths)} trace files and summary.csv to {spec.out}")
    if failures:
        print(f"{failures} cell(s) failed; see summary.csv error column", file=sys.stderr)
    return 0


def _cmd_check(args):
    rows = run_all_checks(cases=args.cases, points=args.points, seed=args.seed)
    failed = [row for row in rows if not row.passed]
    for row in rows:
        print(row)
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    return 0 if not failed else 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="manifed",
        description="Simulate federated optimization on Riemannian manifolds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset container")
    p.add_argument("--problem", required=True, choices=sorted(MAKERS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--agents", type=int, default=10, help="number of agents S")
    p.add_argument("--samples", type=int, default=80, help="samples per agent N")
    p.add_argument("--d", type=int, default=25, help="sphere dimension / Stiefel ambient")
    p.add_argument("--eigengap", type=float, default=1e-3)
    p.add_argument("--n", type=int, default=2, help="SPD matrix order")
    p.add_argument("--diameter", type=float, default=1.0)
    p.add_argument("--p", type=int, default=2, help="Stiefel frame size")
    p.add_argument("--m", type=int, default=100, help="feature dimension")
    p.add_argument("--r", type=int, default=5, help="shared subspace dimension")
    p.add_argument("--noise-std", type=float, default=1e-6)
    p.add_argument("--lam", type=float, default=0.0, help="ridge weight")
    p.add_argument("--d-min", type=int, default=10)
    p.add_argument("--d-max", type=int, default=50)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("reference", help="compute and store the reference optimum")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="defaults to rewriting --data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_reference)

    p = sub.add_parser("run", help="run one federated simulation")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--timing", action="store_true",
                   help="write measured wall time (breaks byte reproducibility)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a K x seed sweep from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("check", help="randomized geometry and gradient checks")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifedError as exc:
        for etype, code in EXIT_CODES:
            if isinstance(exc, etype):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
