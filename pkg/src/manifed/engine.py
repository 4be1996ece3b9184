"""Federated simulation engine.

One outer round: the server broadcasts the global point; every agent runs K
local stochastic gradient steps through the retraction, transporting each step
back to the broadcast point in a single hop and accumulating the transported
steps into a gradient stream; the server averages the streams (fixed ascending
agent order) and retracts. The tangent-mean baseline instead averages the
inverse retractions of the agents' final iterates through the exponential map.

All randomness is keyed by (seed, round, step, agent) so runs are reproducible
regardless of evaluation order; agents participate fully and sample their
minibatches uniformly with replacement.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DomainError, ParameterError, RunError, UnsupportedOperation
from .geometry import DiagnosticsConfig, ManifoldKernel, Point, Tangent, rng_for

FULL_BATCH = "full"


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Outer-round step size rule.

    * fixed(alpha): constant.
    * decaying(alpha0, beta, dec): staircase decay driven by the counter
      c = t // dec. Two readings of the first window exist and both are
      supported. Default: alpha0 while c = 0, then alpha0 / (beta + c);
      the step never increases. With literal_jump=True the divided form
      applies from t >= 1 on, so for beta < 1 rounds 1..dec-1 run at
      alpha0 / beta, i.e. *above* alpha0: a warm phase before the decay
      bites (this is the reading that produces the published long-run
      behaviour of the decaying runs).
    * theorem_decay(kappa, gamma): kappa / (gamma + t).
    """

    kind: str
    alpha: float = 0.0
    alpha0: float = 0.0
    beta: float = 0.0
    dec: int = 1
    kappa: float = 0.0
    gamma: float = 0.0
    literal_jump: bool = False

    @classmethod
    def fixed(cls, alpha):
        if alpha <= 0:
            raise ParameterError(f"step size must be positive, got {alpha}")
        return cls("fixed", alpha=alpha)

    @classmethod
    def decaying(cls, alpha0, beta, dec, literal_jump=False):
        if alpha0 <= 0 or beta <= 0:
            raise ParameterError("alpha0 and beta must be positive")
        if dec < 1:
            raise ParameterError(f"decay interval must be >= 1, got {dec}")
        return cls("decaying", alpha0=alpha0, beta=beta, dec=int(dec),
                   literal_jump=literal_jump)

    @classmethod
    def theorem_decay(cls, kappa, gamma):
        if kappa <= 0 or gamma <= 0:
            raise ParameterError("kappa and gamma must be positive")
        return cls("theorem_decay", kappa=kappa, gamma=gamma)

    def at(self, t: int) -> float:
        if t < 0:
            raise ParameterError(f"round index must be >= 0, got {t}")
        if self.kind == "fixed":
            return self.alpha
        if self.kind == "decaying":
            c = t // self.dec
            if t == 0 or (c == 0 and not self.literal_jump):
                return self.alpha0
            return self.alpha0 / (self.beta + c)
        if self.kind == "theorem_decay":
            return self.kappa / (self.gamma + t)
        raise ParameterError(f"unknown schedule kind {self.kind!r}")

    def to_dict(self):
        if self.kind == "fixed":
            return {"kind": "fixed", "alpha": self.alpha}
        if self.kind == "decaying":
            return {"kind": "decaying", "alpha0": self.alpha0, "beta": self.beta,
                    "dec": self.dec, "literal_jump": self.literal_jump}
        return {"kind": "theorem_decay", "kappa": self.kappa, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "fixed":
            return cls.fixed(d["alpha"])
        if kind == "decaying":
            return cls.decaying(d["alpha0"], d["beta"], d["dec"],
                                d.get("literal_jump", False))
        if kind == "theorem_decay":
            return cls.theorem_decay(d["kappa"], d["gamma"])
        raise ParameterError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class BatchSchedule:
    """Minibatch size per outer round: a constant, an explicit per-round list,
    or the full deterministic sample set."""

    kind: str
    size: int = 0
    sizes: tuple = ()

    @classmethod
    def fixed(cls, size):
        if size < 1:
            raise ParameterError(f"batch size must be >= 1, got {size}")
        return cls("fixed", size=int(size))

    @classmethod
    def bounded(cls, sizes):
        sizes = tuple(int(b) for b in sizes)
        if not sizes or any(b < 1 for b in sizes):
            raise ParameterError("bounded schedule needs a non-empty list of sizes >= 1")
        return cls("bounded", sizes=sizes)

    @classmethod
    def full(cls):
        return cls(FULL_BATCH)

    def at(self, t: int):
        """Size for round t (1-based); FULL_BATCH means all samples in order."""
        if self.kind == "fixed":
            return self.size
        if self.kind == "bounded":
            if not 1 <= t <= len(self.sizes):
                raise ParameterError(
                    f"bounded batch schedule covers rounds 1..{len(self.sizes)}, got t={t}"
                )
            return self.sizes[t - 1]
        if self.kind == FULL_BATCH:
            return FULL_BATCH
        raise ParameterError(f"unknown batch schedule kind {self.kind!r}")

    def to_dict(self):
        if self.kind == "fixed":
            return {"kind": "fixed", "B": self.size}
        if self.kind == "bounded":
            return {"kind": "bounded", "sizes": list(self.sizes)}
        return {"kind": FULL_BATCH}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "fixed":
            return cls.fixed(d["B"])
        if kind == "bounded":
            return cls.bounded(d["sizes"])
        if kind == FULL_BATCH:
            return cls.full()
        raise ParameterError(f"unknown batch schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# Run configuration and records
# ---------------------------------------------------------------------------

AGGREGATIONS = ("gradient_stream", "tangent_mean")


@dataclass
class RunConfig:
    T: int
    S: int
    K: int
    schedule: StepSchedule
    batch: BatchSchedule
    aggregation: str = "gradient_stream"
    retraction_mode: str = "cheap"
    seed: int = 0
    diagnostics: DiagnosticsConfig | None = None

    def __post_init__(self):
        if self.T < 0:
            raise ParameterError(f"need T >= 0, got {self.T}")
        if self.S < 1 or self.K < 1:
            raise ParameterError(f"need S >= 1 and K >= 1, got S={self.S}, K={self.K}")
        if self.aggregation not in AGGREGATIONS:
            raise ParameterError(
                f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}"
            )
        if self.retraction_mode not in ("cheap", "exact_exp"):
            raise ParameterError(f"unknown retraction mode {self.retraction_mode!r}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self):
        return {
            "T": self.T, "S": self.S, "K": self.K,
            "schedule": self.schedule.to_dict(),
            "batch": self.batch.to_dict(),
            "aggregation": self.aggregation,
            "retraction_mode": self.retraction_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                T=int(d["T"]), S=int(d["S"]), K=int(d["K"]),
                schedule=StepSchedule.from_dict(d["schedule"]),
                batch=BatchSchedule.from_dict(d["batch"]),
                aggregation=d.get("aggregation", "gradient_stream"),
                retraction_mode=d.get("retraction_mode", "cheap"),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ParameterError(f"run config missing field {exc}") from exc


@dataclass
class GradientStream:
    """An agent's accumulated transported steps, based at the broadcast point."""

    zeta: Tangent
    agent_id: int
    t: int


@dataclass
class LocalRoundResult:
    stream: GradientStream
    endpoint: Point


@dataclass
class TraceRecord:
    """Metrics logged once per outer round (after aggregation)."""

    t: int
    cost: float
    excess: float
    grad_norm: float
    alpha: float
    batch_size: int
    elapsed: float
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Local rounds and aggregation
# ---------------------------------------------------------------------------

def _batch_indices(rng, n, size):
    if size == FULL_BATCH:
        return np.arange(n)
    return rng.integers(0, n, size=size)


def agent_local_round(problem, kernel, j, x_tilde, t, alpha_list, B_list, seed,
                      rng_label=None) -> LocalRoundResult:
    """Run one agent's K local steps and return its gradient stream.

    alpha_list and B_list give the step size and batch size for each local
    step. Each step retracts the scaled negative minibatch gradient and adds
    its one-hop transport back to the broadcast point into the stream.
    """
    if len(alpha_list) != len(B_list) or not alpha_list:
        raise ParameterError("alpha_list and B_list must be equal-length and non-empty")
    label = j if rng_label is None else rng_label
    x = x_tilde
    zeta = np.zeros(kernel.point_shape)
    for k, (alpha, b) in enumerate(zip(alpha_list, B_list)):
        rng = rng_for(seed, t, k, label)
        idx = _batch_indices(rng, problem.N, b)
        try:
            ghat = problem.minibatch_gradient(j, x, idx)
            eta = Tangent(-alpha * ghat.ambient, x)
            x_next = kernel.retract(x, eta)
            if x is x_tilde:
                zeta += eta.ambient
            else:
                zeta += kernel.transport(x, x_tilde, eta).ambient
        except (DomainError, UnsupportedOperation) as exc:
            raise RunError(str(exc), t=t, k=k, agent=j) from exc
        x = x_next
    return LocalRoundResult(GradientStream(Tangent(zeta, x_tilde), j, t), x)


def _check_stream_bases(x_tilde, streams):
    for s in streams:
        if s.zeta.base is not x_tilde and not np.array_equal(
            s.zeta.base.ambient, x_tilde.ambient
        ):
            raise ContractError(
                f"stream from agent {s.agent_id} is not based at the current "
                "broadcast point"
            )


def aggregate_gradient_stream(kernel, x_tilde, streams) -> Point:
    """Server update: retract the mean stream at the broadcast point.

    Reduction runs in ascending agent id for bitwise determinism.
    """
    if not streams:
        raise ContractError("no gradient streams to aggregate")
    _check_stream_bases(x_tilde, streams)
    acc = np.zeros(kernel.point_shape)
    for s in sorted(streams, key=lambda s: s.agent_id):
        acc = acc + s.zeta.ambient
    acc = acc / len(streams)
    return kernel.retract(x_tilde, Tangent(acc, x_tilde))


def aggregate_tangent_mean(kernel, x_tilde, endpoints) -> Point:
    """Baseline server update: exponential of the mean log of the endpoints.

    Always uses the exponential map and its inverse (the baseline's defining
    formula), independent of the engine's retraction mode.
    """
    if not endpoints:
        raise ContractError("no endpoints to aggregate")
    exp_kernel = kernel.with_retraction("exact_exp")
    acc = np.zeros(kernel.point_shape)
    for _, endpoint in sorted(endpoints, key=lambda pair: pair[0]):
        acc = acc + exp_kernel.inverse_retract(x_tilde, endpoint).ambient
    acc = acc / len(endpoints)
    return exp_kernel.retract(x_tilde, Tangent(acc, x_tilde))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_federated(problem, config: RunConfig, *, f_star=None, x0=None,
                  extra_metrics=None, rng_labels=None):
    """Simulate T outer rounds; returns (trace, final_point).

    f_star fills the excess-risk column (NaN when unknown); extra_metrics maps
    column names to callables evaluated on the global point each round;
    rng_labels optionally relabels the agents' randomness keys (agent j uses
    key rng_labels[j]), which leaves the aggregate invariant under matched
    permutations of agents and labels.
    """
    if config.S != problem.S:
        raise ContractError(
            f"config.S={config.S} does not match problem with {problem.S} agents"
        )
    if rng_labels is not None and len(rng_labels) != problem.S:
        raise ParameterError("rng_labels must have one entry per agent")
    kernel = problem.kernel.with_retraction(config.retraction_mode)
    if (config.aggregation == "tangent_mean"
            and type(kernel).inverse_retract is ManifoldKernel.inverse_retract):
        raise ParameterError(
            f"tangent_mean aggregation needs an inverse retraction, "
            f"which {kernel.manifold_id} does not provide"
        )
    if x0 is None:
        x = kernel.random_point(rng_for(config.seed, 0, 0, 0))
    else:
        x = Point(np.array(x0.ambient, dtype=float), x0.manifold_id)

    trace = []
    for t in range(1, config.T + 1):
        started = time.perf_counter()
        alpha = config.schedule.at(t)
        b = config.batch.at(t)
        alpha_list = [alpha] * config.K
        b_list = [b] * config.K
        results = []
        for j in range(problem.S):
            label = None if rng_labels is None else rng_labels[j]
            results.append(
                agent_local_round(problem, kernel, j, x, t, alpha_list, b_list,
                                  config.seed, rng_label=label)
            )
        if config.aggregation == "gradient_stream":
            x = aggregate_gradient_stream(kernel, x, [r.stream for r in results])
        else:
            try:
                x = aggregate_tangent_mean(
                    kernel, x,
                    [(r.stream.agent_id, r.endpoint) for r in results],
                )
            except (DomainError, UnsupportedOperation) as exc:
                raise RunError(str(exc), t=t) from exc
        cost = problem.objective(x)
        grad_norm = kernel.norm(x, problem.full_gradient(x))
        excess = cost - f_star if f_star is not None else float("nan")
        extra = {}
        if extra_metrics:
            extra = {name: float(fn(x)) for name, fn in extra_metrics.items()}
        trace.append(TraceRecord(
            t=t, cost=cost, excess=excess, grad_norm=grad_norm, alpha=alpha,
            batch_size=problem.N if b == FULL_BATCH else b,
            elapsed=time.perf_counter() - started, extra=extra,
        ))
    return trace, x


# ---------------------------------------------------------------------------
# Step-size condition diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ConditionEntry:
    name: str
    satisfied: bool | None
    margin: float | None
    detail: str = ""


@dataclass
class ConditionReport:
    entries: list

    @property
    def all_known_satisfied(self):
        return all(e.satisfied is not False for e in self.entries)


def check_stepsize_conditions(diag: DiagnosticsConfig, alpha: float, K: int,
                              S: int | None = None) -> ConditionReport:
    """Evaluate the fixed-step sufficient conditions for the given constants.

    K = 1 requires 2 - delta >= L * alpha. K > 1 requires both
    1 >= L^2 alpha^2 M (K+1)(K-2) + alpha L K and 1 - delta >= 2 L^2 alpha^2 M.
    Conditions whose constants are missing are reported as not evaluable.
    """
    if alpha <= 0:
        raise ParameterError(f"step size must be positive, got {alpha}")
    if K < 1:
        raise ParameterError(f"need K >= 1, got {K}")
    L = diag.smoothness_L
    M = diag.transport_bound_M
    delta = diag.delta
    entries = []

    def add(name, margin, detail=""):
        if margin is None:
            entries.append(ConditionEntry(name, None, None, "missing constants"))
        else:
            entries.append(ConditionEntry(name, bool(margin >= 0), float(margin), detail))

    if K == 1:
        margin = None if (L is None or delta is None) else (2.0 - delta) - L * alpha
        add("single_step: 2 - delta >= L*alpha", margin)
    else:
        m1 = None
        if L is not None and M is not None:
            m1 = 1.0 - (L * L * alpha * alpha * M * (K + 1) * (K - 2) + alpha * L * K)
        add("multi_step: 1 >= L^2 a^2 M (K+1)(K-2) + a L K", m1)
        m2 = None
        if L is not None and M is not None and delta is not None:
            m2 = (1.0 - delta) - 2.0 * L * L * alpha * alpha * M
        add("multi_step: 1 - delta >= 2 L^2 a^2 M", m2)
    return ConditionReport(entries)


def stream_deviation_bound(alpha: float, K: int, S: int, M: float, L: float) -> float:
    """H(alpha, K, S) = alpha (2K-1)(K-1) M L / 3 + K / S, the constant that
    scales the aggregation deviation in the fixed-step analysis."""
    if alpha <= 0 or K < 1 or S < 1 or M <= 0 or L <= 0:
        raise ParameterError("stream_deviation_bound needs positive arguments")
    return alpha * (2 * K - 1) * (K - 1) * M * L / 3.0 + K / S


def config_variant(config: RunConfig, **changes) -> RunConfig:
    """Convenience: a copy of the config with fields replaced."""
    return replace(config, **changes)
