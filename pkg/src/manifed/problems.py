"""Federated problem suites.

Each problem owns a manifold kernel and S agents with N samples each; the
global objective is the mean of per-agent objectives, which are means over
their samples. Four suites are provided:

* cpesph  - principal eigenvector estimation on the sphere
* cfmspd  - Frechet mean of SPD matrices (affine-invariant metric)
* mbcfsti - weighted trace minimization (Brockett cost) on the Stiefel manifold
* mtfl    - shared-subspace multitask regression on the Grassmann manifold

Datasets are serialized to a self-describing .npz container that also caches
the reference optimum once computed.
"""

from __future__ import annotations

import abc
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import orth

from .errors import DataFormatError, DomainError, ParameterError
from .geometry import Point, Tangent
from .manifolds import (
    GrassmannKernel,
    SphereKernel,
    SpdKernel,
    StiefelKernel,
    _sym,
    sign_fix_columns,
    spd_inv_sqrt,
    spd_sqrt,
)

logger = logging.getLogger(__name__)

REJECTION_CAP = 10_000


def ridge_solve(z: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve min_w 0.5||Zw - y||^2 + lam ||w||^2 via the normal equations
    (Z^T Z + 2 lam I) w = Z^T y. Singular systems at lam = 0 fall back to the
    minimum-norm least-squares solution."""
    if lam < 0:
        raise ParameterError(f"ridge weight must be >= 0, got {lam}")
    a = z.T @ z + 2.0 * lam * np.eye(z.shape[1])
    b = z.T @ y
    try:
        w = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        w = None
    if w is None or not np.all(np.isfinite(w)) or (
        lam == 0.0
        and np.linalg.norm(a @ w - b) > 1e-8 * (np.linalg.norm(b) + 1.0)
    ):
        logger.debug("singular ridge system, using pseudo-inverse solution")
        w = np.linalg.lstsq(z, y, rcond=None)[0]
    return w


class FederatedProblem(abc.ABC):
    """Base class: evaluation tree F(x) = mean_i f(x; D_i) = mean_i mean_j f(x; z_ij)."""

    kind: str
    S: int
    N: int

    # -- objective ---------------------------------------------------------
    @abc.abstractmethod
    def local_objective(self, j: int, x: Point) -> float: ...

    def objective(self, x: Point) -> float:
        total = 0.0
        for j in range(self.S):
            total += self.local_objective(j, x)
        return total / self.S

    # -- gradients ---------------------------------------------------------
    @abc.abstractmethod
    def _local_gradient_raw(self, j: int, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _batch_gradient_raw(self, j: int, x: np.ndarray, idx: np.ndarray) -> np.ndarray: ...

    def local_gradient(self, j: int, x: Point) -> Tangent:
        return self.kernel.project_tangent(x, self._local_gradient_raw(j, x.ambient))

    def full_gradient(self, x: Point) -> Tangent:
        acc = np.zeros(self.kernel.point_shape)
        for j in range(self.S):
            acc += self._local_gradient_raw(j, x.ambient)
        return self.kernel.project_tangent(x, acc / self.S)

    def minibatch_gradient(self, j, x, batch=None, *, rng=None, batch_size=None) -> Tangent:
        """Mean gradient over a minibatch of the agent's samples.

        Pass explicit sample indices via ``batch``, or a generator and size to
        draw them uniformly with replacement.
        """
        if not 0 <= j < self.S:
            raise ParameterError(f"agent index {j} out of range [0, {self.S})")
        if batch is None:
            if rng is None or batch_size is None:
                raise ParameterError("either batch indices or (rng, batch_size) required")
            if batch_size < 1:
                raise ParameterError(f"batch size must be >= 1, got {batch_size}")
            batch = rng.integers(0, self.N, size=batch_size)
        idx = np.asarray(batch, dtype=int)
        if idx.size == 0:
            raise ParameterError("empty minibatch")
        if idx.min() < 0 or idx.max() >= self.N:
            raise ParameterError(f"minibatch indices out of range [0, {self.N})")
        return self.kernel.project_tangent(x, self._batch_gradient_raw(j, x.ambient, idx))

    # -- reference ---------------------------------------------------------
    def reference_optimum(self) -> Point | None:
        return None

    def reference_value(self) -> float | None:
        return None

    # -- serialization -----------------------------------------------------
    @abc.abstractmethod
    def _payload(self) -> dict: ...


# ---------------------------------------------------------------------------
# Principal eigenvector estimation on the sphere
# ---------------------------------------------------------------------------

@dataclass
class CpeSphProblem(FederatedProblem):
    """Maximize the Rayleigh quotient of a sample covariance over the sphere,
    written as minimization: f(x; D_i) = -(1/N) sum_j (z_ij^T x)^2."""

    kernel: SphereKernel
    samples: np.ndarray  # (S, N, d+1)
    eigengap: float
    seed: int
    kind: str = field(default="cpesph", init=False)

    def __post_init__(self):
        self.S, self.N = self.samples.shape[:2]
        # Per-agent and pooled second-moment matrices; the objective is linear
        # in them so these caches are exact.
        self._cov = np.einsum("ink,inl->ikl", self.samples, self.samples) / self.N
        self._cov_full = self._cov.mean(axis=0)

    def local_objective(self, j, x):
        v = x.ambient[:, 0]
        return float(-v @ self._cov[j] @ v)

    def _local_gradient_raw(self, j, x):
        return -2.0 * (self._cov[j] @ x)

    def _batch_gradient_raw(self, j, x, idx):
        zb = self.samples[j, idx]
        s = zb @ x
        return -2.0 * (zb.T @ s) / idx.size

    def reference_optimum(self):
        w, v = np.linalg.eigh(self._cov_full)
        top = sign_fix_columns(v[:, [-1]])
        return Point(top, self.kernel.manifold_id)

    def reference_value(self):
        return float(-np.linalg.eigvalsh(self._cov_full)[-1])

    def _payload(self):
        return {
            "meta": {"kind": self.kind, "eigengap": self.eigengap, "seed": self.seed},
            "samples": self.samples,
        }


def cpesph_make(d=25, S=10, N=80, eigengap=1e-3, seed=0) -> CpeSphProblem:
    """Synthesize the sphere eigenvector suite.

    Per agent, samples are rows of Z_i = U_i Sigma_i V_i with orthonormal
    factors of standard normal matrices and a spiked diagonal whose top five
    entries are 1, 1 - 1.1v, ..., 1 - 1.4v followed by |y_k| / (d+1) tail
    entries.
    """
    if d < 4:
        raise ParameterError(f"need d >= 4 so the spiked diagonal fits, got d={d}")
    if S < 1 or N < 1:
        raise ParameterError(f"need S >= 1 and N >= 1, got S={S}, N={N}")
    if not 0.0 < eigengap < 1.0 / 1.4:
        raise ParameterError(
            f"eigengap must lie in (0, {1.0 / 1.4:.4f}) to keep the spike dominant"
        )
    rng = np.random.default_rng(seed)
    n_amb = d + 1
    samples = np.empty((S, N, n_amb))
    head = np.array([1.0, 1 - 1.1 * eigengap, 1 - 1.2 * eigengap,
                     1 - 1.3 * eigengap, 1 - 1.4 * eigengap])
    for i in range(S):
        tail = np.abs(rng.standard_normal(n_amb - 5)) / n_amb
        sigma = np.concatenate([head, tail])
        u = orth(rng.standard_normal((N, n_amb)))
        v = orth(rng.standard_normal((n_amb, n_amb)))
        ku = u.shape[1]
        diag = np.zeros((ku, n_amb))
        np.fill_diagonal(diag, sigma[:ku])
        samples[i] = u @ diag @ v
    return CpeSphProblem(SphereKernel(d), samples, eigengap, seed)


# ---------------------------------------------------------------------------
# Frechet mean of SPD matrices
# ---------------------------------------------------------------------------

def _batched_spd_log(mats: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mats)
    if np.any(w < 1e-14):
        raise DomainError("SPD sample congruence lost positive definiteness")
    return (v * np.log(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass
class CfmSpdProblem(FederatedProblem):
    """Riemannian Frechet mean: f(X; D_i) = (1/N) sum_j dist^2(X, Z_ij) under
    the affine-invariant metric."""

    kernel: SpdKernel
    samples: np.ndarray  # (S, N, n, n)
    diameter: float
    seed: int
    kind: str = field(default="cfmspd", init=False)

    def __post_init__(self):
        self.S, self.N = self.samples.shape[:2]

    def _log_terms(self, j, x, idx=None):
        ihalf = spd_inv_sqrt(x)
        z = self.samples[j] if idx is None else self.samples[j, idx]
        return _batched_spd_log(ihalf @ z @ ihalf)

    def local_objective(self, j, x):
        logs = self._log_terms(j, x.ambient)
        return float(np.sum(logs * logs) / self.N)

    def _grad_from_logs(self, x, logs):
        half = spd_sqrt(x)
        return _sym(-2.0 * half @ logs.mean(axis=0) @ half)

    def _local_gradient_raw(self, j, x):
        return self._grad_from_logs(x, self._log_terms(j, x))

    def _batch_gradient_raw(self, j, x, idx):
        return self._grad_from_logs(x, self._log_terms(j, x, idx))

    def _payload(self):
        return {
            "meta": {"kind": self.kind, "diameter": self.diameter, "seed": self.seed},
            "samples": self.samples,
        }


def cfmspd_make(n=2, S=10, N=60, diameter=1.0, seed=0) -> CfmSpdProblem:
    """Wishart(I/n, n) samples, rejection-sampled to dist(Z, I) <= diameter."""
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    if S < 1 or N < 1:
        raise ParameterError(f"need S >= 1 and N >= 1, got S={S}, N={N}")
    if diameter <= 0:
        raise ParameterError(f"diameter must be positive, got {diameter}")
    rng = np.random.default_rng(seed)
    samples = np.empty((S, N, n, n))
    scale = 1.0 / np.sqrt(n)
    for i in range(S):
        for j in range(N):
            for attempt in range(REJECTION_CAP + 1):
                g = rng.standard_normal((n, n)) * scale
                z = g @ g.T
                w = np.linalg.eigvalsh(z)
                if w.min() > 1e-12 and np.linalg.norm(np.log(w)) <= diameter:
                    break
            else:
                raise ParameterError(
                    f"diameter {diameter} rejected {REJECTION_CAP} consecutive "
                    "Wishart draws; loosen the bound"
                )
            samples[i, j] = z
    return CfmSpdProblem(SpdKernel(n), samples, diameter, seed)


# ---------------------------------------------------------------------------
# Weighted trace minimization on the Stiefel manifold
# ---------------------------------------------------------------------------

@dataclass
class MbcfStiProblem(FederatedProblem):
    """Brockett cost f(X; D_i) = (1/N) sum_j trace(X^T A_ij X H) over
    orthonormal frames; minimized by bottom eigenvectors of the pooled A."""

    kernel: StiefelKernel
    samples: np.ndarray  # (S, N, d, d), symmetric
    weights: np.ndarray  # diagonal of H, length p
    seed: int
    kind: str = field(default="mbcfsti", init=False)

    def __post_init__(self):
        self.S, self.N = self.samples.shape[:2]
        self._mean_a = self.samples.mean(axis=1)
        self._mean_a_full = self._mean_a.mean(axis=0)

    def local_objective(self, j, x):
        ax = self._mean_a[j] @ x.ambient
        return float(np.sum(x.ambient * ax * self.weights))

    def _local_gradient_raw(self, j, x):
        return 2.0 * (self._mean_a[j] @ x) * self.weights

    def _batch_gradient_raw(self, j, x, idx):
        ab = self.samples[j, idx].mean(axis=0)
        return 2.0 * (ab @ x) * self.weights

    def reference_optimum(self):
        w, v = np.linalg.eigh(self._mean_a_full)
        return Point(sign_fix_columns(v[:, : self.kernel.p]), self.kernel.manifold_id)

    def reference_value(self):
        w = np.linalg.eigvalsh(self._mean_a_full)
        return float(np.sum(self.weights * w[: self.kernel.p]))

    def _payload(self):
        return {
            "meta": {"kind": self.kind, "seed": self.seed},
            "samples": self.samples,
            "weights": self.weights,
        }


def mbcfsti_make(d=25, p=2, S=20, N=50, seed=0, weights=None) -> MbcfStiProblem:
    """Symmetrized standard-normal matrices A_ij = B + B^T; the weight matrix
    defaults to H = diag(p, p-1, ..., 1)."""
    if not 1 <= p <= d:
        raise ParameterError(f"need 1 <= p <= d, got p={p}, d={d}")
    if S < 1 or N < 1:
        raise ParameterError(f"need S >= 1 and N >= 1, got S={S}, N={N}")
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((S, N, d, d))
    samples = b + np.swapaxes(b, -1, -2)
    if weights is None:
        weights = np.arange(p, 0, -1, dtype=float)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (p,):
            raise ParameterError(f"weights must have shape ({p},), got {weights.shape}")
    return MbcfStiProblem(StiefelKernel(p, d), samples, weights, seed)


# ---------------------------------------------------------------------------
# Multitask feature learning on the Grassmann manifold
# ---------------------------------------------------------------------------

@dataclass
class MtflProblem(FederatedProblem):
    """Shared linear subspace across regression tasks.

    f(U; D_i) = (1/N) sum_j 0.5 ||X_ij U w - y_ij||^2 with w the per-task
    ridge solution at the current U. Gradients account for the dependence of
    w on U; at lam = 0 the correction vanishes at the ridge optimum.
    """

    kernel: GrassmannKernel
    tasks: list  # tasks[i][j] = (X, y)
    lam: float
    noise_std: float
    seed: int
    u_star: np.ndarray | None = None
    test_tasks: list | None = None
    kind: str = field(default="mtfl", init=False)

    def __post_init__(self):
        self.S = len(self.tasks)
        self.N = len(self.tasks[0]) if self.tasks else 0
        if any(len(agent) != self.N for agent in self.tasks):
            raise ParameterError("all agents must hold the same number of tasks")

    def _task_residual(self, x_mat, y, u):
        z = x_mat @ u
        w = ridge_solve(z, y, self.lam)
        return z, w, z @ w - y

    def local_objective(self, j, x):
        u = x.ambient
        total = 0.0
        for x_mat, y in self.tasks[j]:
            _, _, rho = self._task_residual(x_mat, y, u)
            total += 0.5 * float(rho @ rho)
        return total / self.N

    def _task_gradient(self, x_mat, y, u):
        z, w, rho = self._task_residual(x_mat, y, u)
        gz = np.outer(rho, w)
        if self.lam > 0.0:
            a = z.T @ z + 2.0 * self.lam * np.eye(z.shape[1])
            uvec = np.linalg.solve(a, w)
            gz = gz + 2.0 * self.lam * (np.outer(rho, uvec) + np.outer(z @ uvec, w))
        return x_mat.T @ gz

    def _gradient_over(self, agent_tasks, x, idx):
        acc = np.zeros(self.kernel.point_shape)
        for t in idx:
            x_mat, y = agent_tasks[t]
            acc += self._task_gradient(x_mat, y, x)
        return acc / len(idx)

    def _local_gradient_raw(self, j, x):
        return self._gradient_over(self.tasks[j], x, range(self.N))

    def _batch_gradient_raw(self, j, x, idx):
        return self._gradient_over(self.tasks[j], x, idx)

    def subspace_target(self) -> Point | None:
        if self.u_star is None:
            return None
        return Point(self.u_star, self.kernel.manifold_id)

    def predictions(self, x: Point, split="train"):
        """Per-task (prediction, truth) pairs with ridge weights fit on the
        training rows at the given subspace."""
        u = x.ambient
        out = []
        test = self.test_tasks if split == "test" else None
        if split == "test" and test is None:
            raise ParameterError("problem holds no test split")
        for i in range(self.S):
            for j in range(self.N):
                x_mat, y = self.tasks[i][j]
                w = ridge_solve(x_mat @ u, y, self.lam)
                if split == "train":
                    out.append(((x_mat @ u) @ w, y))
                else:
                    xt, yt = test[i][j]
                    if xt.shape[0] == 0:
                        continue
                    out.append(((xt @ u) @ w, yt))
        return out

    def _payload(self):
        payload = {
            "meta": {
                "kind": self.kind,
                "lam": self.lam,
                "noise_std": self.noise_std,
                "seed": self.seed,
                "m": self.kernel.m,
                "r": self.kernel.r,
                "has_test": self.test_tasks is not None,
            }
        }
        for i, agent in enumerate(self.tasks):
            for j, (x_mat, y) in enumerate(agent):
                payload[f"X_{i}_{j}"] = x_mat
                payload[f"y_{i}_{j}"] = y
        if self.u_star is not None:
            payload["U_star"] = self.u_star
        if self.test_tasks is not None:
            for i, agent in enumerate(self.test_tasks):
                for j, (x_mat, y) in enumerate(agent):
                    payload[f"testX_{i}_{j}"] = x_mat
                    payload[f"testy_{i}_{j}"] = y
        return payload


def mtfl_make(m=100, r=5, S=20, N=50, noise_std=1e-6, lam=0.0, seed=0,
              d_range=(10, 50)) -> MtflProblem:
    """Synthetic shared-subspace regression: y = X U* U*^T w + noise with
    task sizes drawn uniformly from d_range."""
    if not 1 <= r < m:
        raise ParameterError(f"need 1 <= r < m, got r={r}, m={m}")
    if S < 1 or N < 1:
        raise ParameterError(f"need S >= 1 and N >= 1, got S={S}, N={N}")
    if noise_std < 0 or lam < 0:
        raise ParameterError("noise_std and lam must be >= 0")
    lo, hi = d_range
    if not 1 <= lo <= hi:
        raise ParameterError(f"invalid task size range {d_range}")
    rng = np.random.default_rng(seed)
    q, rr = np.linalg.qr(rng.standard_normal((m, r)))
    u_star = q * np.sign(np.diag(rr))
    tasks = []
    for _ in range(S):
        agent = []
        for _ in range(N):
            d = int(rng.integers(lo, hi + 1))
            x_mat = rng.standard_normal((d, m))
            w = rng.standard_normal(m)
            y = x_mat @ (u_star @ (u_star.T @ w))
            if noise_std > 0:
                y = y + noise_std * rng.standard_normal(d)
            agent.append((x_mat, y))
        tasks.append(agent)
    return MtflProblem(GrassmannKernel(r, m), tasks, lam, noise_std, seed, u_star)


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

def save_problem(problem: FederatedProblem, path, reference=None):
    """Write a problem to a self-describing .npz container.

    ``reference`` is an optional dict with keys among x_star, f_star,
    rsd_excess, kept alongside the data for reuse by runs.
    """
    payload = problem._payload()
    meta = payload.pop("meta")
    data = {"meta": np.array(json.dumps(meta))}
    for key, val in payload.items():
        data[key] = np.asarray(val)
    if reference:
        if "x_star" in reference and reference["x_star"] is not None:
            data["x_star"] = np.asarray(reference["x_star"])
        for key in ("f_star", "rsd_excess"):
            if key in reference and reference[key] is not None:
                data[key] = np.array(float(reference[key]))
    np.savez(path, **data)


def load_problem(path):
    """Rebuild a problem from its container.

    Returns (problem, reference) where reference holds any cached x_star,
    f_star and rsd_excess entries.
    """
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read dataset container {path}: {exc}") from exc
    if "meta" not in archive:
        raise DataFormatError(f"{path} is not a dataset container (no meta entry)")
    try:
        meta = json.loads(str(archive["meta"]))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: malformed meta entry") from exc
    kind = meta.get("kind")

    if kind == "cpesph":
        samples = archive["samples"]
        problem = CpeSphProblem(
            SphereKernel(samples.shape[2] - 1), samples,
            float(meta["eigengap"]), int(meta["seed"]),
        )
    elif kind == "cfmspd":
        samples = archive["samples"]
        problem = CfmSpdProblem(
            SpdKernel(samples.shape[2]), samples,
            float(meta["diameter"]), int(meta["seed"]),
        )
    elif kind == "mbcfsti":
        samples = archive["samples"]
        weights = archive["weights"]
        problem = MbcfStiProblem(
            StiefelKernel(weights.shape[0], samples.shape[2]),
            samples, weights, int(meta["seed"]),
        )
    elif kind == "mtfl":
        names = set(archive.files)
        tasks, test_tasks = [], []
        i = 0
        while f"X_{i}_0" in names:
            agent, test_agent = [], []
            j = 0
            while f"X_{i}_{j}" in names:
                agent.append((archive[f"X_{i}_{j}"], archive[f"y_{i}_{j}"]))
                if meta.get("has_test"):
                    test_agent.append((archive[f"testX_{i}_{j}"], archive[f"testy_{i}_{j}"]))
                j += 1
            tasks.append(agent)
            test_tasks.append(test_agent)
            i += 1
        if not tasks:
            raise DataFormatError(f"{path}: container holds no tasks")
        problem = MtflProblem(
            GrassmannKernel(int(meta["r"]), int(meta["m"])),
            tasks, float(meta["lam"]), float(meta["noise_std"]), int(meta["seed"]),
            u_star=archive["U_star"] if "U_star" in names else None,
            test_tasks=test_tasks if meta.get("has_test") else None,
        )
    else:
        raise DataFormatError(f"{path}: unknown problem kind {kind!r}")

    reference = {}
    if "x_star" in archive.files:
        reference["x_star"] = archive["x_star"]
    for key in ("f_star", "rsd_excess"):
        if key in archive.files:
            reference[key] = float(archive[key])
    return problem, reference


MAKERS = {
    "cpesph": cpesph_make,
    "cfmspd": cfmspd_make,
    "mbcfsti": mbcfsti_make,
    "mtfl": mtfl_make,
}
