"""Manifold kernels: Euclidean space, the unit sphere, symmetric positive
definite matrices with the affine-invariant metric, the Stiefel manifold, and
the Grassmann manifold.

Every kernel offers a cheap retraction; sphere, SPD and Grassmann also offer
the exact exponential map (``retraction_mode="exact_exp"``). Inverse
retractions are always the exponential log map. Vector transport is parallel
transport on the sphere and SPD, and a transporter by parallelization
(orthonormal-basis matching) on Stiefel and Grassmann.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, UnsupportedOperation
from .geometry import ManifoldKernel, Point, Tangent

# Eigenvalues are clamped here before logarithms so that marginally feasible
# SPD inputs fail loudly instead of producing -inf.
EIG_FLOOR = 1e-14

# Antipodal / cut-locus guard on the sphere.
ANTIPODAL_TOL = 1e-10


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sym_matrix_function(a: np.ndarray, fn) -> np.ndarray:
    """Apply fn to the eigenvalues of a symmetric matrix."""
    w, v = np.linalg.eigh(_sym(a))
    return (v * fn(w)) @ v.T


def _checked_log_eigs(w: np.ndarray, what: str) -> np.ndarray:
    if np.any(w < EIG_FLOOR):
        raise DomainError(
            f"{what}: eigenvalue {w.min():.3e} below positive-definite floor {EIG_FLOOR}"
        )
    return np.log(w)


def spd_sqrt(a):
    return sym_matrix_function(a, lambda w: np.sqrt(np.maximum(w, 0.0)))


def spd_inv_sqrt(a):
    w, v = np.linalg.eigh(_sym(a))
    if np.any(w < EIG_FLOOR):
        raise DomainError(
            f"matrix inverse square root: eigenvalue {w.min():.3e} below floor {EIG_FLOOR}"
        )
    return (v / np.sqrt(w)) @ v.T


def spd_log(a, what="matrix logarithm"):
    w, v = np.linalg.eigh(_sym(a))
    return (v * _checked_log_eigs(w, what)) @ v.T


def spd_exp(a):
    return sym_matrix_function(a, np.exp)


def sign_fix_columns(q: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's first entry of magnitude > 1e-8 is
    positive. Gives a canonical deterministic representative."""
    q = q.copy()
    for j in range(q.shape[1]):
        col = q[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-8)
        if idx.size and col[idx[0]] < 0:
            q[:, j] = -col
    return q


def _orthonormal_complement(x: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the orthogonal complement of range(x)."""
    d = x.shape[0]
    q, _ = np.linalg.qr(x, mode="complete")
    return sign_fix_columns(q[:, x.shape[1]:]) if x.shape[1] < d else np.zeros((d, 0))


def _polar_factor(a: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    return u @ vt


# ---------------------------------------------------------------------------
# Euclidean
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EuclideanKernel(ManifoldKernel):
    """Flat space; identity geometry. Used to check the engine degenerates to
    plain federated averaging."""

    rows: int
    cols: int = 1
    retraction_mode: str = "cheap"

    @property
    def manifold_id(self):
        return f"euclidean({self.rows}x{self.cols})"

    @property
    def point_shape(self):
        return (self.rows, self.cols)

    @property
    def dim(self):
        return self.rows * self.cols

    def inner(self, x, u, v):
        return float(np.vdot(u.ambient, v.ambient))

    def retract(self, x, v):
        return Point(x.ambient + v.ambient, self.manifold_id)

    def inverse_retract(self, x, y):
        return Tangent(y.ambient - x.ambient, x)

    def transport(self, x, y, v):
        return Tangent(v.ambient.copy(), y)

    def distance(self, x, y):
        return float(np.linalg.norm(y.ambient - x.ambient))

    def project_point(self, a):
        return np.asarray(a, dtype=float)

    def project_tangent_array(self, x, a):
        return np.asarray(a, dtype=float)

    def feasibility_error(self, a):
        return 0.0

    def random_point(self, rng):
        return Point(rng.standard_normal(self.point_shape), self.manifold_id)


# ---------------------------------------------------------------------------
# Sphere
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereKernel(ManifoldKernel):
    """Unit sphere S^d embedded in R^(d+1), points stored as (d+1) x 1."""

    d: int
    retraction_mode: str = "cheap"

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError(f"sphere dimension must be >= 1, got {self.d}")

    @property
    def manifold_id(self):
        return f"sphere(d={self.d})"

    @property
    def point_shape(self):
        return (self.d + 1, 1)

    @property
    def dim(self):
        return self.d

    def inner(self, x, u, v):
        return float(np.vdot(u.ambient, v.ambient))

    def _exp_array(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return x.copy()
        y = np.cos(nv) * x + (np.sin(nv) / nv) * v
        return y / np.linalg.norm(y)

    def retract(self, x, v):
        if not np.any(v.ambient):
            return Point(x.ambient.copy(), self.manifold_id)
        if self.retraction_mode == "exact_exp":
            return Point(self._exp_array(x.ambient, v.ambient), self.manifold_id)
        w = x.ambient + v.ambient
        return Point(w / np.linalg.norm(w), self.manifold_id)

    def _log_array(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        c = float(np.vdot(x, y))
        if c <= -1.0 + ANTIPODAL_TOL:
            raise DomainError("sphere log map undefined near the antipode")
        c = min(c, 1.0)
        w = y - c * x
        nw = float(np.linalg.norm(w))
        if nw < 1e-15:
            return np.zeros_like(x)
        return (np.arccos(c) / nw) * w

    def inverse_retract(self, x, y):
        return Tangent(self._log_array(x.ambient, y.ambient), x)

    def transport(self, x, y, u):
        # Parallel transport along the geodesic from x to y = Exp_x(v).
        v = self._log_array(x.ambient, y.ambient)
        nv = float(np.linalg.norm(v))
        if nv < 1e-15:
            return Tangent(u.ambient.copy(), y)
        vu = float(np.vdot(v, u.ambient)) / nv
        moved = (
            u.ambient
            + (np.cos(nv) - 1.0) * (vu / nv) * v
            - np.sin(nv) * vu * x.ambient
        )
        return Tangent(moved, y)

    def distance(self, x, y):
        c = np.clip(float(np.vdot(x.ambient, y.ambient)), -1.0, 1.0)
        return float(np.arccos(c))

    def project_point(self, a):
        return a / np.linalg.norm(a)

    def project_tangent_array(self, x, a):
        return a - float(np.vdot(x.ambient, a)) * x.ambient

    def feasibility_error(self, a):
        return abs(float(np.vdot(a, a)) - 1.0)

    def random_point(self, rng):
        g = rng.standard_normal(self.point_shape)
        return Point(g / np.linalg.norm(g), self.manifold_id)


# ---------------------------------------------------------------------------
# Symmetric positive definite matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpdKernel(ManifoldKernel):
    """SPD matrices of order n with the affine-invariant metric
    <U, V>_X = trace(U X^-1 V X^-1). Retraction is the exponential map in
    both modes (no cheaper retraction is used on this manifold)."""

    n: int
    retraction_mode: str = "cheap"

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"SPD order must be >= 1, got {self.n}")

    @property
    def manifold_id(self):
        return f"spd(n={self.n})"

    @property
    def point_shape(self):
        return (self.n, self.n)

    @property
    def dim(self):
        return self.n * (self.n + 1) // 2

    def inner(self, x, u, v):
        a = np.linalg.solve(x.ambient, u.ambient)
        b = np.linalg.solve(x.ambient, v.ambient)
        return float(np.trace(a @ b))

    def retract(self, x, v):
        if not np.any(v.ambient):
            return Point(x.ambient.copy(), self.manifold_id)
        half = spd_sqrt(x.ambient)
        ihalf = spd_inv_sqrt(x.ambient)
        inner = spd_exp(ihalf @ v.ambient @ ihalf)
        return Point(_sym(half @ inner @ half), self.manifold_id)

    def inverse_retract(self, x, y):
        half = spd_sqrt(x.ambient)
        ihalf = spd_inv_sqrt(x.ambient)
        mid = spd_log(ihalf @ y.ambient @ ihalf, "SPD log map")
        return Tangent(_sym(half @ mid @ half), x)

    def transport(self, x, y, u):
        # E = (Y X^-1)^(1/2) computed through the similarity
        # Y X^-1 = Y^(1/2) (Y^(1/2) X^-1 Y^(1/2)) Y^(-1/2); transport is E U E^T.
        yh = spd_sqrt(y.ambient)
        yih = spd_inv_sqrt(y.ambient)
        s = _sym(yh @ np.linalg.solve(x.ambient, yh))
        e = yh @ spd_sqrt(s) @ yih
        return Tangent(_sym(e @ u.ambient @ e.T), y)

    def distance(self, x, y):
        ihalf = spd_inv_sqrt(x.ambient)
        mid = spd_log(ihalf @ y.ambient @ ihalf, "SPD distance")
        return float(np.linalg.norm(mid))

    def project_point(self, a):
        return _sym(a)

    def project_tangent_array(self, x, a):
        return _sym(a)

    def feasibility_error(self, a):
        asym = float(np.linalg.norm(a - a.T))
        wmin = float(np.linalg.eigvalsh(_sym(a)).min())
        return asym + max(0.0, 1e-12 - wmin)

    def random_point(self, rng):
        s = _sym(rng.standard_normal((self.n, self.n))) / np.sqrt(self.n)
        return Point(spd_exp(s), self.manifold_id)

    def random_tangent(self, rng, x):
        return Tangent(_sym(rng.standard_normal((self.n, self.n))), x)


# ---------------------------------------------------------------------------
# Stiefel
# ---------------------------------------------------------------------------

def _stiefel_tangent_frame(x_amb, xp):
    """Orthonormal basis of the Stiefel tangent space, as a (d*p, dim) matrix.

    Columns are the canonical elements {X(E_ij - E_ji)/sqrt(2)} followed by
    {X_perp E_ab}, flattened. Orthonormality is exact by construction.
    """
    d, p = x_amb.shape
    dim = d * p - p * (p + 1) // 2
    b = np.zeros((d * p, dim))
    col = 0
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(p):
        for j in range(i + 1, p):
            m = np.zeros((d, p))
            m[:, j] = x_amb[:, i] * inv_sqrt2
            m[:, i] = -x_amb[:, j] * inv_sqrt2
            b[:, col] = m.ravel()
            col += 1
    for a in range(d - p):
        for c in range(p):
            m = np.zeros((d, p))
            m[:, c] = xp[:, a]
            b[:, col] = m.ravel()
            col += 1
    return b


@dataclass(frozen=True)
class StiefelKernel(ManifoldKernel):
    """Orthonormal p-frames in R^d (X is d x p, X^T X = I_p), embedded metric.

    Retraction is the polar retraction; no inverse retraction is available.
    Transport is the polar alignment of the two tangent spaces: coordinates in
    the canonical frame at x are rotated by the orthogonal polar factor of the
    frame overlap before being read out in the frame at y. The composite map
    depends only on the pair of tangent spaces, not on the frames, and it is
    the isometry closest to plain projection. Frame-to-frame coordinate
    matching alone is not used: the canonical frames twist relative to the
    geodesics, which corrupts transported search directions over moderate
    distances.
    """

    p: int
    d: int
    retraction_mode: str = "cheap"

    def __post_init__(self):
        if not 1 <= self.p <= self.d:
            raise ParameterError(f"need 1 <= p <= d, got p={self.p}, d={self.d}")

    @property
    def manifold_id(self):
        return f"stiefel(p={self.p},d={self.d})"

    @property
    def point_shape(self):
        return (self.d, self.p)

    @property
    def dim(self):
        return self.d * self.p - self.p * (self.p + 1) // 2

    def inner(self, x, u, v):
        return float(np.vdot(u.ambient, v.ambient))

    def retract(self, x, v):
        if not np.any(v.ambient):
            return Point(x.ambient.copy(), self.manifold_id)
        if self.retraction_mode == "exact_exp":
            raise UnsupportedOperation(
                "exact exponential not provided on the Stiefel manifold; "
                "use the polar retraction"
            )
        return Point(_polar_factor(x.ambient + v.ambient), self.manifold_id)

    def transport(self, x, y, v):
        bx = _stiefel_tangent_frame(x.ambient, _orthonormal_complement(x.ambient))
        by = _stiefel_tangent_frame(y.ambient, _orthonormal_complement(y.ambient))
        u, _, vt = np.linalg.svd(by.T @ bx)
        coords = bx.T @ v.ambient.ravel()
        moved = by @ ((u @ vt) @ coords)
        return Tangent(moved.reshape(self.d, self.p), y)

    def project_point(self, a):
        return _polar_factor(a)

    def project_tangent_array(self, x, a):
        return a - x.ambient @ _sym(x.ambient.T @ a)

    def feasibility_error(self, a):
        return float(np.linalg.norm(a.T @ a - np.eye(self.p)))

    def random_point(self, rng):
        g = rng.standard_normal((self.d, self.p))
        q, r = np.linalg.qr(g)
        return Point(q * np.sign(np.diag(r)), self.manifold_id)


# ---------------------------------------------------------------------------
# Grassmann
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrassmannKernel(ManifoldKernel):
    """r-dimensional subspaces of R^m, represented by orthonormal m x r
    matrices with horizontal tangents (U^T V = 0).

    Transport is exact parallel transport along the connecting geodesic,
    available in closed form from the SVD of the log; it shares the log's
    domain restriction near the cut locus.
    """

    r: int
    m: int
    retraction_mode: str = "cheap"

    def __post_init__(self):
        if not 1 <= self.r < self.m:
            raise ParameterError(f"need 1 <= r < m, got r={self.r}, m={self.m}")

    @property
    def manifold_id(self):
        return f"grassmann(r={self.r},m={self.m})"

    @property
    def point_shape(self):
        return (self.m, self.r)

    @property
    def dim(self):
        return self.r * (self.m - self.r)

    def inner(self, x, u, v):
        return float(np.vdot(u.ambient, v.ambient))

    def retract(self, x, v):
        if not np.any(v.ambient):
            return Point(x.ambient.copy(), self.manifold_id)
        if self.retraction_mode == "exact_exp":
            p, s, qt = np.linalg.svd(v.ambient, full_matrices=False)
            y = (x.ambient @ qt.T) * np.cos(s) + p * np.sin(s)
            return Point(_polar_factor(y @ qt), self.manifold_id)
        return Point(_polar_factor(x.ambient + v.ambient), self.manifold_id)

    def inverse_retract(self, x, y):
        m0 = x.ambient.T @ y.ambient
        sv = np.linalg.svd(m0, compute_uv=False)
        if sv[-1] < 1e-15 or sv[0] / sv[-1] > 1e12:
            raise DomainError(
                "Grassmann log map ill-posed: subspaces contain nearly "
                "orthogonal directions"
            )
        w = np.linalg.solve(m0.T, (y.ambient - x.ambient @ m0).T).T
        p, s, qt = np.linalg.svd(w, full_matrices=False)
        return Tangent((p * np.arctan(s)) @ qt, x)

    def transport(self, x, y, v):
        delta = self.inverse_retract(x, y)
        p, s, qt = np.linalg.svd(delta.ambient, full_matrices=False)
        pv = p.T @ v.ambient
        moved = (-(x.ambient @ qt.T) * np.sin(s) + p * np.cos(s)) @ pv
        out = moved + v.ambient - p @ pv
        return Tangent(self.project_tangent_array(y, out), y)

    def distance(self, x, y):
        sv = np.linalg.svd(x.ambient.T @ y.ambient, compute_uv=False)
        theta = np.arccos(np.clip(sv, -1.0, 1.0))
        return float(np.linalg.norm(theta))

    def project_point(self, a):
        return _polar_factor(a)

    def project_tangent_array(self, x, a):
        return a - x.ambient @ (x.ambient.T @ a)

    def feasibility_error(self, a):
        return float(np.linalg.norm(a.T @ a - np.eye(self.r)))

    def random_point(self, rng):
        g = rng.standard_normal((self.m, self.r))
        q, r = np.linalg.qr(g)
        return Point(q * np.sign(np.diag(r)), self.manifold_id)


KERNEL_KINDS = {
    "euclidean": EuclideanKernel,
    "sphere": SphereKernel,
    "spd": SpdKernel,
    "stiefel": StiefelKernel,
    "grassmann": GrassmannKernel,
}
