"""Experiment harness: metrics, trace/summary CSV output, sweep driver, and
the loader for real multitask regression data.

Trace files follow the schema t,F,excess,grad_norm,alpha,B,elapsed_s with
problem-specific metric columns (e.g. subspace_dist) appended after elapsed_s.
Floats are written with repr(), the shortest representation that round-trips
exactly, so re-runs reproduce files byte for byte. Wall-clock timings are kept
in memory but written as 0.0 unless explicitly requested, since measured time
can never be reproduced.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import RunConfig, TraceRecord, run_federated
from .errors import DataFormatError, DomainError, ParameterError
from .geometry import Point
from .manifolds import GrassmannKernel
from .problems import MAKERS, MtflProblem, load_problem, save_problem
from .solvers import SolverConfig, rsd_minimize

logger = logging.getLogger(__name__)

WORKERS_ENV = "MANIFED_WORKERS"

TRACE_COLUMNS = ("t", "F", "excess", "grad_norm", "alpha", "B", "elapsed_s")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def nmse(pairs) -> float:
    """Normalized mean squared error over (prediction, truth) array pairs.

    MSE is the total squared error divided by the total label count; the
    normalizer is the population variance (1/n) of the pooled truths.
    """
    preds, truths = [], []
    for pred, truth in pairs:
        pred = np.asarray(pred, dtype=float).ravel()
        truth = np.asarray(truth, dtype=float).ravel()
        if pred.shape != truth.shape:
            raise ParameterError("prediction/truth length mismatch")
        preds.append(pred)
        truths.append(truth)
    if not preds:
        raise ParameterError("nmse needs at least one pair")
    pred = np.concatenate(preds)
    truth = np.concatenate(truths)
    if truth.size < 2:
        raise ParameterError("nmse needs at least two labels")
    var = float(np.mean((truth - truth.mean()) ** 2))
    if var == 0.0:
        raise DomainError("nmse undefined: labels have zero variance")
    return float(np.mean((pred - truth) ** 2) / var)


def subspace_distance(u: Point, u_star: Point) -> float:
    """2-norm of the principal angle vector between two subspaces given by
    orthonormal representatives."""
    a, b = u.ambient, u_star.ambient
    if a.shape != b.shape:
        raise ParameterError(f"representative shapes differ: {a.shape} vs {b.shape}")
    sv = np.linalg.svd(a.T @ b, compute_uv=False)
    theta = np.arccos(np.clip(sv, -1.0, 1.0))
    return float(np.linalg.norm(theta))


def iterations_to_threshold(trace, epsilon: float):
    """First round whose excess risk is <= epsilon, or None."""
    for rec in trace:
        if rec.excess <= epsilon:
            return rec.t
    return None


# ---------------------------------------------------------------------------
# Trace CSV
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(trace, path, timing=False):
    """Write trace records; extra metric columns are appended after elapsed_s
    in sorted name order."""
    extra_names = sorted({name for rec in trace for name in rec.extra})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(TRACE_COLUMNS) + extra_names)
        for rec in trace:
            row = [
                str(rec.t), _fmt(rec.cost), _fmt(rec.excess), _fmt(rec.grad_norm),
                _fmt(rec.alpha), str(rec.batch_size),
                _fmt(rec.elapsed if timing else 0.0),
            ]
            row += [_fmt(rec.extra.get(name, float("nan"))) for name in extra_names]
            writer.writerow(row)


def read_trace_csv(path):
    """Read a trace file back into TraceRecord objects."""
    records = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[: len(TRACE_COLUMNS)] != list(TRACE_COLUMNS):
                raise DataFormatError(f"{path}: not a trace file (bad header)")
            extra_names = header[len(TRACE_COLUMNS):]
            for row in reader:
                if len(row) != len(header):
                    raise DataFormatError(f"{path}: ragged row {row!r}")
                records.append(TraceRecord(
                    t=int(row[0]), cost=float(row[1]), excess=float(row[2]),
                    grad_norm=float(row[3]), alpha=float(row[4]),
                    batch_size=int(row[5]), elapsed=float(row[6]),
                    extra={name: float(val)
                           for name, val in zip(extra_names, row[7:])},
                ))
    except OSError as exc:
        raise DataFormatError(f"cannot read trace file {path}: {exc}") from exc
    return records


def trace_filename(problem_kind: str, K: int, seed: int) -> str:
    return f"{problem_kind}_K{K}_seed{seed}.csv"


# ---------------------------------------------------------------------------
# Experiment spec and sweep driver
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "problem", "K", "seed", "final_F", "final_excess", "final_grad_norm",
    "nmse", "subspace_dist", "iters_to_threshold", "error",
)


@dataclass
class ExperimentSpec:
    """A sweep over local step counts with repeated seeds.

    The problem comes either from a dataset container (``dataset``) or a
    generator kind with parameters (``problem``/``params``). ``threshold``
    overrides the default iterations-to-threshold epsilon (10x the stored
    centralized RSD excess, when available).
    """

    config: RunConfig
    sweep: tuple
    repeats: int
    out: str
    dataset: str | None = None
    problem: str | None = None
    params: dict = field(default_factory=dict)
    threshold: float | None = None
    per_round_nmse: bool = False

    def __post_init__(self):
        if (self.dataset is None) == (self.problem is None):
            raise ParameterError("specify exactly one of dataset or problem")
        if self.problem is not None and self.problem not in MAKERS:
            raise ParameterError(f"unknown problem kind {self.problem!r}")
        self.sweep = tuple(int(k) for k in self.sweep)
        if not self.sweep or any(k < 1 for k in self.sweep):
            raise ParameterError("sweep must be a non-empty list of K >= 1")
        if self.repeats < 1:
            raise ParameterError(f"repeats must be >= 1, got {self.repeats}")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                config=RunConfig.from_dict(d["config"]),
                sweep=d["sweep"],
                repeats=int(d.get("repeats", 1)),
                out=d["out"],
                dataset=d.get("dataset"),
                problem=d.get("problem"),
                params=d.get("params", {}),
                threshold=d.get("threshold"),
                per_round_nmse=bool(d.get("per_round_nmse", False)),
            )
        except KeyError as exc:
            raise ParameterError(f"experiment spec missing field {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise DataFormatError(f"cannot read spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc


@dataclass
class MetricRow:
    problem: str
    K: int
    seed: int
    final_F: float = float("nan")
    final_excess: float = float("nan")
    final_grad_norm: float = float("nan")
    nmse: float = float("nan")
    subspace_dist: float = float("nan")
    iters_to_threshold: int | None = None
    error: str = ""


@dataclass
class MetricReport:
    rows: list
    trace_paths: list


def _spec_problem(spec: ExperimentSpec):
    if spec.dataset is not None:
        problem, reference = load_problem(spec.dataset)
    else:
        problem = MAKERS[spec.problem](**spec.params)
        reference = {}
    f_star = reference.get("f_star")
    if f_star is None and problem.reference_value() is not None:
        f_star = problem.reference_value()
    return problem, reference, f_star


def _extra_metrics_for(problem, spec):
    extra = {}
    if isinstance(problem, MtflProblem):
        target = problem.subspace_target()
        if target is not None:
            extra["subspace_dist"] = lambda x: subspace_distance(x, target)
        if spec.per_round_nmse:
            extra["nmse"] = lambda x: nmse(problem.predictions(x))
    return extra


def _threshold_for(spec, reference):
    if spec.threshold is not None:
        return spec.threshold
    excess = reference.get("rsd_excess")
    if excess is not None and excess > 0:
        return 10.0 * excess
    return None


def _run_cell(spec: ExperimentSpec, K: int, seed: int, timing=False):
    """One (K, seed) sweep cell; returns (MetricRow, trace_path or None)."""
    problem, reference, f_star = _spec_problem(spec)
    row = MetricRow(problem=problem.kind, K=K, seed=seed)
    config = replace(spec.config, K=K, seed=seed)
    try:
        trace, final = run_federated(
            problem, config, f_star=f_star,
            extra_metrics=_extra_metrics_for(problem, spec),
        )
    except Exception as exc:  # keep sweeping; the row records the failure
        logger.warning("cell K=%d seed=%d failed: %s", K, seed, exc)
        row.error = f"{type(exc).__name__}: {exc}"
        return row, None

    path = Path(spec.out) / trace_filename(problem.kind, K, seed)
    write_trace_csv(trace, path, timing=timing)
    if trace:
        last = trace[-1]
        row.final_F = last.cost
        row.final_excess = last.excess
        row.final_grad_norm = last.grad_norm
        if "subspace_dist" in last.extra:
            row.subspace_dist = last.extra["subspace_dist"]
    else:
        row.final_F = problem.objective(final)
        row.final_excess = row.final_F - f_star if f_star is not None else float("nan")
        kernel = problem.kernel
        row.final_grad_norm = kernel.norm(final, problem.full_gradient(final))
    if isinstance(problem, MtflProblem):
        split = "test" if problem.test_tasks is not None else "train"
        try:
            row.nmse = nmse(problem.predictions(final, split=split))
        except DomainError:
            pass
        target = problem.subspace_target()
        if target is not None:
            row.subspace_dist = subspace_distance(final, target)
    eps = _threshold_for(spec, reference)
    if eps is not None and trace:
        row.iters_to_threshold = iterations_to_threshold(trace, eps)
    return row, str(path)


def _cell_args(args):
    return _run_cell(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ParameterError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def run_experiment(spec: ExperimentSpec, timing=False) -> MetricReport:
    """Run the sweep, write one trace CSV per cell and a summary CSV.

    Cells are independent; with MANIFED_WORKERS > 1 they run in parallel
    processes. Results are assembled in (K, seed) order either way, so output
    files are identical.
    """
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(spec, K, spec.config.seed + rep)
             for K in spec.sweep for rep in range(spec.repeats)]
    workers = worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_args, [c + (timing,) for c in cells]))
    else:
        results = [_run_cell(spec, K, seed, timing) for _, K, seed in cells]
    rows = [row for row, _ in results]
    paths = [p for _, p in results if p is not None]
    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([
                row.problem, str(row.K), str(row.seed), _fmt(row.final_F),
                _fmt(row.final_excess), _fmt(row.final_grad_norm), _fmt(row.nmse),
                _fmt(row.subspace_dist),
                "" if row.iters_to_threshold is None else str(row.iters_to_threshold),
                row.error,
            ])
    return MetricReport(rows, paths)


# ---------------------------------------------------------------------------
# Reference computation
# ---------------------------------------------------------------------------

def compute_reference(problem, seed=0, solver: SolverConfig | None = None):
    """Reference optimum for a problem: the closed form when one exists,
    polished against an RSD run; otherwise pure RSD.

    Returns a dict with x_star, f_star and rsd_excess (the RSD cost minus the
    closed-form value, 0.0 when RSD itself defines the value).
    """
    solver = solver or SolverConfig()
    closed = problem.reference_optimum()
    closed_value = problem.reference_value()
    kernel = problem.kernel
    x0 = closed if closed is not None else kernel.random_point(
        np.random.default_rng(seed)
    )
    result = rsd_minimize(problem, x0, solver)
    if closed_value is not None:
        return {
            "x_star": closed.ambient,
            "f_star": closed_value,
            "rsd_excess": max(result.cost - closed_value, 0.0),
        }
    return {"x_star": result.point.ambient, "f_star": result.cost, "rsd_excess": 0.0}


def add_reference_to_container(path, out=None, seed=0, solver=None):
    problem, reference = load_problem(path)
    reference = compute_reference(problem, seed=seed, solver=solver)
    save_problem(problem, out or path, reference=reference)
    return reference


# ---------------------------------------------------------------------------
# Real multitask data loader
# ---------------------------------------------------------------------------

def load_multitask_csv(directory, S, N, split_fraction=0.8, seed=0, lam=1e-3,
                       r=5, standardize=True) -> MtflProblem:
    """Build an MTFL problem from per-task CSV files (features..., label).

    Files are taken in sorted name order; each is split into train/test rows
    by drawing floor(split_fraction * rows) training rows without replacement.
    The first S*N tasks are grouped contiguously into S agents; any surplus
    tasks are dropped and logged.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.glob("*.csv"))
    if len(files) < S * N:
        raise DataFormatError(
            f"{directory}: found {len(files)} task files, need at least {S * N}"
        )
    if not 0.0 < split_fraction <= 1.0:
        raise ParameterError(f"split fraction must lie in (0, 1], got {split_fraction}")
    dropped = files[S * N:]
    for path in dropped:
        logger.info("dropping surplus task file %s", path.name)
    files = files[: S * N]

    width = None
    tasks_flat = []
    rng = np.random.default_rng(seed)
    for path in files:
        try:
            rows = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataFormatError(f"{path}: cannot parse CSV: {exc}") from exc
        if width is None:
            width = rows.shape[1]
            if width < 2:
                raise DataFormatError(f"{path}: need at least one feature column")
        elif rows.shape[1] != width:
            raise DataFormatError(
                f"{path}: has {rows.shape[1]} columns, expected {width}"
            )
        x_mat, y = rows[:, :-1], rows[:, -1]
        n_train = int(np.floor(split_fraction * rows.shape[0]))
        n_train = max(n_train, 1)
        perm = rng.permutation(rows.shape[0])
        train, test = perm[:n_train], perm[n_train:]
        tasks_flat.append(((x_mat[train], y[train]), (x_mat[test], y[test])))

    if standardize:
        all_x = np.concatenate([t[0][0] for t in tasks_flat])
        mean, std = all_x.mean(axis=0), all_x.std(axis=0)
        std[std == 0] = 1.0
        tasks_flat = [
            (((xtr - mean) / std, ytr), ((xte - mean) / std if xte.size else xte, yte))
            for (xtr, ytr), (xte, yte) in tasks_flat
        ]

    m = width - 1
    tasks = [[tasks_flat[i * N + j][0] for j in range(N)] for i in range(S)]
    test_tasks = [[tasks_flat[i * N + j][1] for j in range(N)] for i in range(S)]
    r = min(r, m - 1) if m > 1 else 1
    return MtflProblem(GrassmannKernel(r, m), tasks, lam, 0.0, seed,
                       test_tasks=test_tasks)
