"""Centralized reference solver: Riemannian steepest descent with Armijo
backtracking line search. Used to produce optimal values for problems without
a closed form and to cross-check the ones that have one."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import Point, Tangent


@dataclass
class SolverConfig:
    max_iters: int = 5000
    grad_tol: float = 1e-6
    initial_step: float | None = None  # default: 1/||grad F(x0)|| clipped to [1e-6, 1e2]
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_halvings: int = 50
    retraction_mode: str = "cheap"

    def __post_init__(self):
        if self.max_iters < 0:
            raise ParameterError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.grad_tol <= 0:
            raise ParameterError(f"grad_tol must be positive, got {self.grad_tol}")
        if not 0 < self.shrink < 1:
            raise ParameterError(f"shrink must lie in (0, 1), got {self.shrink}")
        if self.sufficient_decrease <= 0 or self.max_halvings < 1:
            raise ParameterError("invalid line search parameters")


@dataclass
class SolverResult:
    point: Point
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    line_search_failed: bool = False
    history: list = field(default_factory=list)  # (iteration, cost, grad_norm)


def rsd_minimize(problem, x0: Point, config: SolverConfig | None = None) -> SolverResult:
    """Minimize the problem's global objective from x0.

    Each iteration backtracks from the previously accepted step (doubled,
    capped at 1e2) until the Armijo condition
    F(R_x(-t g)) <= F(x) - c t ||g||^2 holds; if 50 halvings fail the best
    iterate is returned with the failure flag set.
    """
    config = config or SolverConfig()
    kernel = problem.kernel.with_retraction(config.retraction_mode)
    x = Point(np.array(x0.ambient, dtype=float), x0.manifold_id)
    cost = problem.objective(x)
    grad = problem.full_gradient(x)
    gnorm = kernel.norm(x, grad)
    history = [(0, cost, gnorm)]
    if config.initial_step is not None:
        step = config.initial_step
    else:
        step = 1.0 / gnorm if gnorm > 0 else 1.0
    step = float(np.clip(step, 1e-6, 1e2))

    iters = 0
    while gnorm > config.grad_tol and iters < config.max_iters:
        accepted = None
        t = step
        for _ in range(config.max_halvings):
            cand = kernel.retract(x, Tangent(-t * grad.ambient, x))
            cand_cost = problem.objective(cand)
            if cand_cost <= cost - config.sufficient_decrease * t * gnorm * gnorm:
                accepted = (cand, cand_cost, t)
                break
            t *= config.shrink
        if accepted is None:
            return SolverResult(x, cost, gnorm, iters, False,
                                line_search_failed=True, history=history)
        x, cost, _ = accepted
        grad = problem.full_gradient(x)
        gnorm = kernel.norm(x, grad)
        step = float(min(accepted[2] * 2.0, 1e2))
        iters += 1
        history.append((iters, cost, gnorm))
    return SolverResult(x, cost, gnorm, iters, gnorm <= config.grad_tol,
                        history=history)
