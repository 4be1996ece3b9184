"""Randomized property checks over kernels and problem gradients.

These back the ``check`` CLI command and the acceptance suite: retraction
feasibility, transport isometry, inverse-retraction round trips, projection
idempotency, metric sanity, and analytic-versus-finite-difference gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedOperation
from .geometry import (
    ManifoldKernel,
    Tangent,
    check_transport_isometry,
    finite_difference_gradient,
    rng_for,
)
from .manifolds import (
    EuclideanKernel,
    GrassmannKernel,
    SphereKernel,
    SpdKernel,
    StiefelKernel,
)
from .problems import cfmspd_make, cpesph_make, mbcfsti_make, mtfl_make


@dataclass
class CheckRow:
    kernel: str
    name: str
    worst: float
    tol: float

    @property
    def passed(self):
        return self.worst <= self.tol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"[{status}] {self.kernel:24s} {self.name:34s} worst={self.worst:.3e} tol={self.tol:.0e}"


def _has_inverse_retract(kernel):
    return type(kernel).inverse_retract is not ManifoldKernel.inverse_retract


def _has_exp(kernel):
    return not isinstance(kernel, StiefelKernel)


def _random_nearby(kernel, rng, x, max_dist=1.0):
    """A second point reachable by a moderate retraction step; avoids the
    sphere cut locus so transports stay well defined."""
    v = kernel.random_tangent(rng, x)
    nv = np.linalg.norm(v.ambient)
    if nv == 0:
        return x
    scale = max_dist * rng.uniform(0.1, 1.0) / nv
    return kernel.retract(x, Tangent(scale * v.ambient, x))


def geometry_rows(kernel, cases=100, seed=0) -> list[CheckRow]:
    rng = rng_for(seed, 17)
    kid = kernel.manifold_id
    modes = [kernel.with_retraction("cheap")]
    if _has_exp(kernel):
        modes.append(kernel.with_retraction("exact_exp"))

    feas = 0.0
    for i in range(cases):
        k = modes[i % len(modes)]
        x = k.random_point(rng)
        v = k.random_tangent(rng, x)
        y = k.retract(x, v)
        feas = max(feas, k.feasibility_error(y.ambient))
    rows = [CheckRow(kid, "retraction feasibility", feas, 1e-10)]

    iso = 0.0
    ident = 0.0
    for _ in range(cases):
        x = kernel.random_point(rng)
        y = _random_nearby(kernel, rng, x)
        v = kernel.random_tangent(rng, x)
        try:
            iso = max(iso, check_transport_isometry(kernel, x, y, v))
        except DomainError:
            continue
        stay = kernel.transport(x, x, v)
        ident = max(ident, float(np.linalg.norm(stay.ambient - v.ambient)))
    rows.append(CheckRow(kid, "transport isometry", iso, 1e-10))
    rows.append(CheckRow(kid, "transport to self is identity", ident, 1e-12))

    if _has_inverse_retract(kernel):
        exp_kernel = kernel.with_retraction("exact_exp") if _has_exp(kernel) else kernel
        rt = 0.0
        for _ in range(cases):
            x = exp_kernel.random_point(rng)
            v = exp_kernel.random_tangent(rng, x)
            nv = np.linalg.norm(v.ambient)
            if nv == 0:
                continue
            v = Tangent(v.ambient * (0.1 * rng.uniform(0.05, 1.0) / nv), x)
            y = exp_kernel.retract(x, v)
            back = exp_kernel.inverse_retract(x, y)
            rt = max(rt, float(np.linalg.norm(back.ambient - v.ambient)))
        rows.append(CheckRow(kid, "inverse retraction round trip", rt, 1e-8))
    else:
        try:
            x = kernel.random_point(rng)
            kernel.inverse_retract(x, x)
            rows.append(CheckRow(kid, "inverse retraction unsupported", 1.0, 0.0))
        except UnsupportedOperation:
            rows.append(CheckRow(kid, "inverse retraction unsupported", 0.0, 0.0))

    proj = 0.0
    tproj = 0.0
    msym = 0.0
    for _ in range(cases):
        x = kernel.random_point(rng)
        a = x.ambient + 0.01 * rng.standard_normal(kernel.point_shape)
        p1 = kernel.project_point(a)
        p2 = kernel.project_point(p1)
        proj = max(proj, float(np.linalg.norm(p2 - p1)))
        raw = rng.standard_normal(kernel.point_shape)
        t1 = kernel.project_tangent_array(x, raw)
        t2 = kernel.project_tangent_array(x, t1)
        tproj = max(tproj, float(np.linalg.norm(t2 - t1)))
        u = kernel.random_tangent(rng, x)
        w = kernel.random_tangent(rng, x)
        uv = kernel.inner(x, u, w)
        vu = kernel.inner(x, w, u)
        scale = max(abs(uv), 1.0)
        msym = max(msym, abs(uv - vu) / scale)
        if np.linalg.norm(u.ambient) > 0 and not kernel.inner(x, u, u) > 0:
            msym = max(msym, 1.0)
    rows.append(CheckRow(kid, "point projection idempotent", proj, 1e-12))
    rows.append(CheckRow(kid, "tangent projection idempotent", tproj, 1e-12))
    rows.append(CheckRow(kid, "metric symmetric and positive", msym, 1e-12))
    return rows


def gradient_row(problem, points=20, h=1e-5, tol=1e-5, seed=0) -> CheckRow:
    """Worst relative error between analytic and finite-difference gradients
    of the global objective at random points."""
    rng = rng_for(seed, 23)
    kernel = problem.kernel
    worst = 0.0
    for _ in range(points):
        x = kernel.random_point(rng)
        g = problem.full_gradient(x)
        fd = finite_difference_gradient(lambda p: problem.objective(p), kernel, x, h=h)
        diff = Tangent(g.ambient - fd.ambient, x)
        denom = max(kernel.norm(x, g), 1e-12)
        worst = max(worst, kernel.norm(x, diff) / denom)
    return CheckRow(problem.kernel.manifold_id, f"gradient vs FD ({problem.kind})",
                    worst, tol)


def experiment_kernels():
    """Kernels at the sizes the full-scale experiment suites run on."""
    return [
        SphereKernel(25),
        SpdKernel(2),
        StiefelKernel(2, 25),
        GrassmannKernel(5, 100),
    ]


def small_gradient_problems(seed=0):
    """Reduced problem instances for finite-difference comparisons."""
    return [
        (cpesph_make(d=10, S=3, N=20, eigengap=1e-2, seed=seed), 1e-5),
        (cfmspd_make(n=3, S=2, N=5, diameter=1.5, seed=seed), 1e-5),
        (mbcfsti_make(d=8, p=2, S=2, N=5, seed=seed), 1e-5),
        (mtfl_make(m=12, r=2, S=2, N=3, noise_std=1e-3, lam=0.0, seed=seed,
                   d_range=(8, 14)), 1e-4),
        (mtfl_make(m=10, r=2, S=2, N=3, noise_std=1e-2, lam=0.05, seed=seed + 1,
                   d_range=(8, 12)), 1e-4),
    ]


def run_all_checks(cases=100, points=5, seed=0):
    rows = []
    for kernel in experiment_kernels() + [EuclideanKernel(4, 1)]:
        rows.extend(geometry_rows(kernel, cases=cases, seed=seed))
    for problem, tol in small_gradient_problems(seed):
        rows.append(gradient_row(problem, points=points, tol=tol, seed=seed))
    return rows
