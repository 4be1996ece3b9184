"""Core geometric data model.

Points and tangent vectors are stored in ambient coordinates as dense float64
matrices (a vector is d x 1). A ManifoldKernel bundles the operations the
federated engine needs: metric, retraction, inverse retraction where available,
vector transport, projections and feasibility checks. Numerical checks
(retraction order, transport isometry, finite-difference gradients) live here
so they can be run against any kernel.
"""

from __future__ import annotations

import abc
import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import FeasibilityError, ParameterError, UnsupportedOperation

# Constraint violations above this are rejected when points/tangents are built
# through the validating constructors.
FEASIBILITY_TOL = 1e-10


@dataclass(eq=False)
class Point:
    """A manifold point in ambient coordinates."""

    ambient: np.ndarray
    manifold_id: str


@dataclass(eq=False)
class Tangent:
    """A tangent vector in ambient coordinates, attached to its base point."""

    ambient: np.ndarray
    base: Point


@dataclass
class DiagnosticsConfig:
    """User-supplied theory constants for step-size condition checks.

    All fields are optional; conditions that need a missing constant are
    reported as not evaluable rather than guessed.
    """

    smoothness_L: float | None = None
    transport_bound_M: float | None = None
    delta: float | None = None
    noise_sigma2: float | None = None
    rpl_mu: float | None = None

    def __post_init__(self):
        for name in ("smoothness_L", "transport_bound_M", "noise_sigma2", "rpl_mu"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ParameterError(f"{name} must be positive, got {val}")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")


def _as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ParameterError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


class ManifoldKernel(abc.ABC):
    """Operations a manifold must provide to the engine.

    Concrete kernels are frozen dataclasses; ``retraction_mode`` selects
    between the cheap retraction and the exact exponential where both exist.
    """

    retraction_mode: str

    # -- identification ----------------------------------------------------
    @property
    @abc.abstractmethod
    def manifold_id(self) -> str: ...

    @property
    @abc.abstractmethod
    def point_shape(self) -> tuple[int, int]: ...

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        """Intrinsic manifold dimension (number of tangent basis vectors)."""

    def with_retraction(self, mode: str) -> "ManifoldKernel":
        if mode not in ("cheap", "exact_exp"):
            raise ParameterError(f"unknown retraction mode {mode!r}")
        return dataclasses.replace(self, retraction_mode=mode)

    # -- metric ------------------------------------------------------------
    @abc.abstractmethod
    def inner(self, x: Point, u: Tangent, v: Tangent) -> float: ...

    def norm(self, x: Point, u: Tangent) -> float:
        return float(np.sqrt(max(self.inner(x, u, u), 0.0)))

    # -- core maps ---------------------------------------------------------
    @abc.abstractmethod
    def retract(self, x: Point, v: Tangent) -> Point: ...

    def inverse_retract(self, x: Point, y: Point) -> Tangent:
        raise UnsupportedOperation(
            f"no inverse retraction available on {self.manifold_id}"
        )

    @abc.abstractmethod
    def transport(self, x: Point, y: Point, v: Tangent) -> Tangent:
        """Isometric transport of v from T_x to T_y."""

    def distance(self, x: Point, y: Point) -> float:
        raise UnsupportedOperation(f"no distance available on {self.manifold_id}")

    # -- projections and validation ---------------------------------------
    @abc.abstractmethod
    def project_point(self, a: np.ndarray) -> np.ndarray:
        """Map a nearby ambient matrix back onto the manifold (drift control)."""

    @abc.abstractmethod
    def project_tangent_array(self, x: Point, a: np.ndarray) -> np.ndarray: ...

    def project_tangent(self, x: Point, a) -> Tangent:
        return Tangent(self.project_tangent_array(x, _as_matrix(a)), x)

    @abc.abstractmethod
    def feasibility_error(self, a: np.ndarray) -> float: ...

    def tangency_error(self, x: Point, a: np.ndarray) -> float:
        return float(np.linalg.norm(a - self.project_tangent_array(x, a)))

    def point(self, a) -> Point:
        """Validating point constructor."""
        arr = _as_matrix(a)
        if arr.shape != self.point_shape:
            raise ParameterError(
                f"{self.manifold_id}: expected shape {self.point_shape}, got {arr.shape}"
            )
        err = self.feasibility_error(arr)
        if not err <= FEASIBILITY_TOL:
            raise FeasibilityError(
                f"{self.manifold_id}: constraint violation {err:.3e} exceeds {FEASIBILITY_TOL}"
            )
        return Point(arr, self.manifold_id)

    def tangent(self, x: Point, a) -> Tangent:
        """Validating tangent constructor."""
        arr = _as_matrix(a)
        if arr.shape != self.point_shape:
            raise ParameterError(
                f"{self.manifold_id}: expected shape {self.point_shape}, got {arr.shape}"
            )
        err = self.tangency_error(x, arr)
        if not err <= FEASIBILITY_TOL:
            raise FeasibilityError(
                f"{self.manifold_id}: tangency violation {err:.3e} exceeds {FEASIBILITY_TOL}"
            )
        return Tangent(arr, x)

    def zero_tangent(self, x: Point) -> Tangent:
        return Tangent(np.zeros(self.point_shape), x)

    # -- sampling ----------------------------------------------------------
    @abc.abstractmethod
    def random_point(self, rng: np.random.Generator) -> Point: ...

    def random_tangent(self, rng: np.random.Generator, x: Point) -> Tangent:
        return Tangent(
            self.project_tangent_array(x, rng.standard_normal(self.point_shape)), x
        )


# ---------------------------------------------------------------------------
# Deterministic RNG streams
# ---------------------------------------------------------------------------

def seed_sequence(*keys: int) -> np.random.SeedSequence:
    """Seed sequence keyed by a tuple of non-negative integers."""
    return np.random.SeedSequence(tuple(int(k) for k in keys))


def rng_for(*keys: int) -> np.random.Generator:
    """Independent generator for a key tuple, e.g. (seed, round, step, agent).

    The stream depends only on the key, never on call order, so runs are
    reproducible and agents can be evaluated in any order.
    """
    return np.random.default_rng(seed_sequence(*keys))


# ---------------------------------------------------------------------------
# Numerical checks
# ---------------------------------------------------------------------------

def check_retraction_first_order(kernel, x: Point, v: Tangent, steps) -> list[float]:
    """First-order error e(h) = || (R_x(h v) - x)/h - v || for each h.

    v must be tangent at x; for a first-order retraction e(h) -> 0 as h -> 0.
    A zero v returns zeros by convention (R_x(0) = x).
    """
    if kernel.tangency_error(x, v.ambient) > FEASIBILITY_TOL:
        raise ParameterError("v is not tangent at x")
    if float(np.linalg.norm(v.ambient)) == 0.0:
        return [0.0 for _ in steps]
    out = []
    for h in steps:
        if h <= 0:
            raise ParameterError(f"step sizes must be positive, got {h}")
        y = kernel.retract(x, Tangent(h * v.ambient, x))
        out.append(float(np.linalg.norm((y.ambient - x.ambient) / h - v.ambient)))
    return out


def check_transport_isometry(kernel, x: Point, y: Point, v: Tangent) -> float:
    """Relative norm change |  ||Gamma v||_y - ||v||_x | / ||v||_x (0 for v = 0)."""
    nv = kernel.norm(x, v)
    if nv == 0.0:
        return 0.0
    moved = kernel.transport(x, y, v)
    return abs(kernel.norm(y, moved) - nv) / nv


def tangent_basis(kernel, x: Point) -> list[Tangent]:
    """Orthonormal basis of T_x built from projected canonical ambient matrices.

    Modified Gram-Schmidt with pivoting on the metric norm; exactly kernel.dim
    vectors are produced.
    """
    shape = kernel.point_shape
    cands = []
    for i in range(shape[0]):
        for j in range(shape[1]):
            e = np.zeros(shape)
            e[i, j] = 1.0
            cands.append(kernel.project_tangent_array(x, e))
    basis = []

    def ip(a, b):
        return kernel.inner(x, Tangent(a, x), Tangent(b, x))

    while len(basis) < kernel.dim:
        norms = [np.sqrt(max(ip(c, c), 0.0)) for c in cands]
        pick = int(np.argmax(norms))
        if norms[pick] < 1e-8:
            raise FeasibilityError(
                f"tangent basis incomplete on {kernel.manifold_id}: "
                f"{len(basis)} of {kernel.dim} directions found"
            )
        b = cands.pop(pick) / norms[pick]
        cands = [c - ip(c, b) * b for c in cands]
        basis.append(b)
    return [Tangent(b, x) for b in basis]


def finite_difference_gradient(objective, kernel, x: Point, h: float = 1e-5) -> Tangent:
    """Central-difference Riemannian gradient of a scalar objective at x.

    Differences are taken along an orthonormal tangent basis through the
    kernel's retraction; the coefficients are reassembled in the same basis.
    Serves as the independent oracle for analytic gradients.
    """
    if h <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    basis = tangent_basis(kernel, x)
    grad = np.zeros(kernel.point_shape)
    for b in basis:
        fp = objective(kernel.retract(x, Tangent(h * b.ambient, x)))
        fm = objective(kernel.retract(x, Tangent(-h * b.ambient, x)))
        grad += ((fp - fm) / (2.0 * h)) * b.ambient
    return Tangent(grad, x)
