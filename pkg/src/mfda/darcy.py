"""Steady groundwater flow with a log-Gaussian transmissivity field.

The head ``h`` solves ``-div(T grad h) = 0`` on the unit square with ``h = 1``
on the left edge, ``h = 0`` on the right edge and no flux across the top and
bottom. Linear triangular elements are used on a structured mesh whose
squares are split along the (0,0)-(1,1) diagonal.

``log T`` is a Karhunen-Loeve expansion of a Gaussian field with a squared
exponential kernel. Because that kernel factorizes over the two coordinates,
the covariance eigenproblem on a tensor grid reduces to two one-dimensional
Nystrom problems; eigenfunctions are extended to arbitrary points with the
Nystrom formula, which is how every mesh level sees the same modes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import spsolve

logger = logging.getLogger(__name__)

__all__ = [
    "StructuredTriMesh",
    "KLBasis",
    "SensorSet",
    "DarcyLevel",
    "DarcyProblem",
    "DEFAULT_SENSORS",
    "FULL_MESHES",
    "DESK_MESHES",
    "build_kl_basis",
    "kl_eigenpairs_dense",
    "trapezoid_weights",
    "sample_log_transmissivity",
    "solve_darcy",
    "observe",
    "sensor_matrix",
    "darcy_level_model",
]

# LF levels 1-4 and HF
FULL_MESHES = (5, 10, 25, 50, 100)
# LF levels 1-3 and HF
DESK_MESHES = (5, 10, 25, 50)

KL_MEAN = 1.0
KL_SIGMA = 0.1
KL_CORR_LENGTH = 0.1
KL_MODES = 64


class StructuredTriMesh:
    """``n x n`` squares on [0,1]^2, each split into two triangles.

    Node ``k = j * (n + 1) + i`` sits at ``(i / n, j / n)``.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("mesh needs at least one cell per axis")
        self.n = int(n)
        g = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(g, g, indexing="xy")
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        n00 = (j * (n + 1) + i).ravel()
        n10 = n00 + 1
        n01 = n00 + n + 1
        n11 = n01 + 1
        lower = np.column_stack([n00, n10, n11])
        upper = np.column_stack([n00, n11, n01])
        self.triangles = np.empty((2 * n * n, 3), dtype=np.int64)
        self.triangles[0::2] = lower
        self.triangles[1::2] = upper

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_elements(self) -> int:
        return 2 * self.n * self.n

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def centroid_matrix(self) -> sp.csr_matrix:
        """Element-by-node matrix averaging the three vertex values."""
        rows = np.repeat(np.arange(self.n_elements), 3)
        return sp.csr_matrix(
            (np.full(rows.size, 1.0 / 3.0), (rows, self.triangles.ravel())),
            shape=(self.n_elements, self.n_nodes),
        )

    def lumped_weights(self) -> np.ndarray:
        """Tensor trapezoid weights (interior h^2, edges h^2/2, corners h^2/4)."""
        w = trapezoid_weights(self.n)
        return np.outer(w, w).ravel()

    def left(self) -> np.ndarray:
        return np.flatnonzero(np.isclose(self.nodes[:, 0], 0.0))

    def right(self) -> np.ndarray:
        return np.flatnonzero(np.isclose(self.nodes[:, 0], 1.0))


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n + 1, 1.0 / n)
    w[0] = w[-1] = 0.5 / n
    return w


def _gauss_kernel(a, b, corr_length):
    d = np.subtract.outer(a, b)
    return np.exp(-(d * d) / (2.0 * corr_length**2))


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


@dataclass
class _Nystrom1D:
    """Weighted 1-D eigenpairs of the unit-variance Gaussian kernel."""

    grid: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray  # unit weighted norm, one column per mode
    corr_length: float

    @classmethod
    def build(cls, n: int, corr_length: float, n_modes: int) -> "_Nystrom1D":
        grid = np.linspace(0.0, 1.0, n + 1)
        w = trapezoid_weights(n)
        sw = np.sqrt(w)
        A = sw[:, None] * _gauss_kernel(grid, grid, corr_length) * sw[None, :]
        vals, vecs = np.linalg.eigh(A)
        order = np.argsort(vals)[::-1][:n_modes]
        vals = vals[order]
        vecs = _fix_signs(vecs[:, order]) / sw[:, None]
        return cls(grid, w, vals, vecs, corr_length)

    def evaluate(self, x) -> np.ndarray:
        """Nystrom extension; exact at grid points."""
        K = _gauss_kernel(np.asarray(x, float), self.grid, self.corr_length)
        return (K * self.weights) @ self.vectors / self.eigenvalues


@dataclass
class KLBasis:
    """Truncated KL expansion of ``log T``.

    ``eigenfunctions`` holds ``psi_i`` at the nodes of ``ref_n``'s tensor grid,
    unit-normalized under the trapezoid weights. ``mode_index`` records the
    pair of 1-D modes whose product forms each 2-D mode.
    """

    mean: float
    sigma: float
    corr_length: float
    m: int
    ref_n: int
    eigenvalues: np.ndarray
    mode_index: np.ndarray
    eigenfunctions: np.ndarray
    _axis: _Nystrom1D | None = None

    @property
    def weights(self) -> np.ndarray:
        w = trapezoid_weights(self.ref_n)
        return np.outer(w, w).ravel()

    def _axis_modes(self) -> _Nystrom1D:
        if self._axis is None:
            n1 = int(self.mode_index.max()) + 1
            self._axis = _Nystrom1D.build(self.ref_n, self.corr_length, n1)
        return self._axis

    def evaluate(self, points) -> np.ndarray:
        """``psi_i(x)`` at arbitrary points, shape ``(n_points, m)``."""
        pts = np.atleast_2d(np.asarray(points, float))
        ax = self._axis_modes()
        ux, invx = np.unique(pts[:, 0], return_inverse=True)
        uy, invy = np.unique(pts[:, 1], return_inverse=True)
        fx = ax.evaluate(ux)[invx.ravel()]
        fy = ax.evaluate(uy)[invy.ravel()]
        return fx[:, self.mode_index[:, 0]] * fy[:, self.mode_index[:, 1]]

    def scaled_modes(self, points) -> np.ndarray:
        """``sqrt(lambda_i) psi_i(x)``; the log-field is ``mean + scaled_modes @ theta``."""
        return self.evaluate(points) * np.sqrt(self.eigenvalues)

    def captured_fraction(self) -> float:
        """Share of the grid covariance trace retained by the ``m`` modes."""
        ax = _Nystrom1D.build(self.ref_n, self.corr_length, self.ref_n + 1)
        total = self.sigma**2 * np.sum(ax.eigenvalues) ** 2
        return float(np.sum(self.eigenvalues) / total)

    # -- persistence

    def cache_key(self) -> str:
        tag = json.dumps([self.ref_n, self.sigma, self.corr_length, self.m])
        return hashlib.sha256(tag.encode()).hexdigest()[:16]

    def save(self, path) -> None:
        tmp = os.fspath(path) + ".tmp.npz"
        np.savez(
            tmp,
            header=np.array(json.dumps({
                "mean": self.mean, "sigma": self.sigma, "corr_length": self.corr_length,
                "m": self.m, "ref_n": self.ref_n,
            })),
            eigenvalues=self.eigenvalues,
            mode_index=self.mode_index,
            eigenfunctions=self.eigenfunctions,
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "KLBasis":
        with np.load(path) as d:
            hdr = json.loads(str(d["header"]))
            return cls(
                mean=hdr["mean"], sigma=hdr["sigma"], corr_length=hdr["corr_length"],
                m=hdr["m"], ref_n=hdr["ref_n"], eigenvalues=d["eigenvalues"],
                mode_index=d["mode_index"], eigenfunctions=d["eigenfunctions"],
            )


def build_kl_basis(
    ref_n: int,
    sigma: float = KL_SIGMA,
    corr_length: float = KL_CORR_LENGTH,
    m: int = KL_MODES,
    mean: float = KL_MEAN,
    cache_dir=None,
) -> KLBasis:
    """KL basis on the ``(ref_n + 1)^2`` tensor grid with trapezoid weights.

    The 2-D eigenvalues are ``sigma^2 mu_a mu_b`` for 1-D eigenvalues ``mu``;
    the ``m`` largest products are kept (ties ordered by mode index).
    """
    if corr_length <= 0:
        raise ValueError("correlation length must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n_pts = (ref_n + 1) ** 2
    if m < 1 or m > n_pts:
        raise ValueError(f"m={m} must lie in [1, {n_pts}]")
    path = None
    if cache_dir is not None:
        tag = json.dumps([ref_n, sigma, corr_length, m])
        path = os.path.join(cache_dir, f"kl-{hashlib.sha256(tag.encode()).hexdigest()[:16]}.npz")
        if os.path.exists(path):
            basis = KLBasis.load(path)
            basis.mean = mean
            return basis
    ax = _Nystrom1D.build(ref_n, corr_length, ref_n + 1)
    prod = np.outer(ax.eigenvalues, ax.eigenvalues)
    a, b = np.unravel_index(np.arange(prod.size), prod.shape)
    # sort by value descending, then by (a, b) to make ties deterministic
    order = np.lexsort((b, a, -prod.ravel()))[:m]
    idx = np.column_stack([a[order], b[order]])
    if np.any(prod.ravel()[order] <= 0):
        raise ValueError("requested modes include non-positive eigenvalues")
    # psi(x, y) = phi_a(x) phi_b(y) on the grid, node k = j*(n+1) + i
    funcs = ax.vectors[:, idx[:, 0]][None, :, :] * ax.vectors[:, idx[:, 1]][:, None, :]
    basis = KLBasis(
        mean=mean,
        sigma=sigma,
        corr_length=corr_length,
        m=m,
        ref_n=ref_n,
        eigenvalues=sigma**2 * prod.ravel()[order],
        mode_index=idx,
        eigenfunctions=funcs.reshape(n_pts, m),
    )
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        basis.save(path)
    return basis


def kl_eigenpairs_dense(points, weights, sigma: float, corr_length: float, m: int):
    """Dense weighted Nystrom eigenpairs for an arbitrary point set.

    Returns eigenvalues (descending) and eigenvectors with unit weighted norm.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    w = np.asarray(weights, float)
    if m > len(pts):
        raise ValueError("m exceeds the number of points")
    if corr_length <= 0:
        raise ValueError("correlation length must be positive")
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    C = sigma**2 * np.exp(-d2 / (2.0 * corr_length**2))
    sw = np.sqrt(w)
    vals, vecs = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    order = np.argsort(vals)[::-1][:m]
    return vals[order], _fix_signs(vecs[:, order]) / sw[:, None]


def sample_log_transmissivity(basis: KLBasis, theta, points) -> np.ndarray:
    """Log-field ``mean + sum_i sqrt(lambda_i) psi_i(x) theta_i`` at ``points``."""
    theta = np.asarray(theta, float)
    if theta.shape != (basis.m,):
        raise ValueError(f"theta must have shape ({basis.m},), got {theta.shape}")
    return basis.mean + basis.scaled_modes(points) @ theta


@dataclass(frozen=True)
class SensorSet:
    locations: np.ndarray

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, float))
        if loc.shape[1] != 2:
            raise ValueError("sensor locations must be 2-D points")
        object.__setattr__(self, "locations", loc)

    @property
    def d(self) -> int:
        return self.locations.shape[0]

    @classmethod
    def lattice(cls, k: int = 5) -> "SensorSet":
        g = np.arange(1, k + 1) / (k + 1)
        X, Y = np.meshgrid(g, g, indexing="xy")
        return cls(np.column_stack([X.ravel(), Y.ravel()]))


DEFAULT_SENSORS = SensorSet.lattice(5)


def sensor_matrix(mesh: StructuredTriMesh, sensors: SensorSet) -> sp.csr_matrix:
    """Rows of barycentric weights interpolating nodal values at the sensors."""
    loc = sensors.locations
    if np.any(loc < 0.0) or np.any(loc > 1.0):
        raise ValueError("sensor outside the domain")
    n = mesh.n
    i = np.minimum(np.floor(loc[:, 0] * n).astype(int), n - 1)
    j = np.minimum(np.floor(loc[:, 1] * n).astype(int), n - 1)
    s = loc[:, 0] * n - i
    t = loc[:, 1] * n - j
    n00 = j * (n + 1) + i
    n10, n01, n11 = n00 + 1, n00 + n + 1, n00 + n + 2
    low = s >= t
    cols = np.where(low[:, None], np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01]))
    vals = np.where(
        low[:, None],
        np.column_stack([1 - s, s - t, t]),
        np.column_stack([1 - t, s, t - s]),
    )
    rows = np.repeat(np.arange(len(loc)), 3)
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(len(loc), mesh.n_nodes))


def observe(h, mesh: StructuredTriMesh, sensors: SensorSet = DEFAULT_SENSORS) -> np.ndarray:
    return sensor_matrix(mesh, sensors) @ np.asarray(h, float)


class _Assembler:
    """Precomputed maps from element transmissivities to the reduced FEM system."""

    def __init__(self, mesh: StructuredTriMesh):
        self.mesh = mesh
        p = mesh.nodes[mesh.triangles]
        area = np.abs(mesh.signed_areas())
        # gradients of barycentric coordinates
        x, y = p[..., 0], p[..., 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area[:, None, None])
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        elem = np.repeat(np.arange(mesh.n_elements), 9)
        vals = local.ravel()

        N = mesh.n_nodes
        self.left = mesh.left()
        dirichlet = np.zeros(N, bool)
        dirichlet[self.left] = True
        dirichlet[mesh.right()] = True
        self.free = np.flatnonzero(~dirichlet)
        renum = -np.ones(N, dtype=np.int64)
        renum[self.free] = np.arange(self.free.size)
        on_left = np.zeros(N, bool)
        on_left[self.left] = True

        ff = (~dirichlet[rows]) & (~dirichlet[cols])
        keys = renum[rows[ff]] * self.free.size + renum[cols[ff]]
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.nnz = ukeys.size
        self.indices = (ukeys % self.free.size).astype(np.int32)
        self.indptr = np.searchsorted(ukeys // self.free.size, np.arange(self.free.size + 1)).astype(np.int32)
        self.data_map = sp.csr_matrix((vals[ff], (inv.ravel(), elem[ff])), shape=(self.nnz, mesh.n_elements))
        # rhs = -K_fd h_d with h = 1 on the left edge and 0 on the right
        fl = (~dirichlet[rows]) & on_left[cols]
        self.rhs_map = sp.csr_matrix(
            (-vals[fl], (renum[rows[fl]], elem[fl])), shape=(self.free.size, mesh.n_elements)
        )

    def system(self, T: np.ndarray):
        n = self.free.size
        K = sp.csr_matrix((self.data_map @ T, self.indices, self.indptr), shape=(n, n))
        return K, self.rhs_map @ T

    def dense_system(self, T: np.ndarray):
        n = self.free.size
        K = np.zeros(n * n)
        K[self._flat] = self.data_map @ T
        return K.reshape(n, n), self.rhs_map @ T

    @cached_property
    def _flat(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.free.size), np.diff(self.indptr))
        return rows * self.free.size + self.indices


# small systems are cheaper to factor densely than through the sparse solver
_DENSE_LIMIT = 150

_ASSEMBLERS: dict[int, _Assembler] = {}


def _assembler(mesh: StructuredTriMesh) -> _Assembler:
    a = _ASSEMBLERS.get(mesh.n)
    if a is None:
        a = _ASSEMBLERS[mesh.n] = _Assembler(mesh)
    return a


def solve_darcy(mesh: StructuredTriMesh, T, rtol: float = 1e-10) -> np.ndarray:
    """Nodal heads for per-element transmissivities ``T``."""
    T = np.asarray(T, float)
    if T.shape != (mesh.n_elements,):
        raise ValueError(f"expected {mesh.n_elements} element values, got {T.shape}")
    if not np.all(T > 0) or not np.all(np.isfinite(T)):
        raise ValueError("transmissivity must be positive and finite")
    asm = _assembler(mesh)
    if asm.free.size <= _DENSE_LIMIT:
        K, rhs = asm.dense_system(T)
        hf = cho_solve(cho_factor(K), rhs)
    else:
        K, rhs = asm.system(T)
        hf = spsolve(K.tocsc(), rhs)
    res = np.linalg.norm(K @ hf - rhs)
    if not np.isfinite(res) or res > rtol * max(np.linalg.norm(rhs), 1e-300):
        raise np.linalg.LinAlgError(f"linear solve residual {res:.3e} exceeds tolerance")
    h = np.zeros(mesh.n_nodes)
    h[asm.left] = 1.0
    h[asm.free] = hf
    return h


class DarcyLevel:
    """Parameter-to-observable map ``theta -> heads at the sensors`` on one mesh."""

    def __init__(self, n: int, basis: KLBasis, sensors: SensorSet = DEFAULT_SENSORS):
        self.mesh = StructuredTriMesh(n)
        self.basis = basis
        self.sensors = sensors
        nodal = basis.scaled_modes(self.mesh.nodes)
        self._elem_modes = np.asarray(self.mesh.centroid_matrix @ nodal)
        self._obs = sensor_matrix(self.mesh, sensors)
        self.calls = 0

    @property
    def n(self) -> int:
        return self.mesh.n

    def log_transmissivity(self, theta) -> np.ndarray:
        """Element log-transmissivity (centroid value of the nodal log-field)."""
        theta = np.asarray(theta, float)
        if theta.shape != (self.basis.m,):
            raise ValueError(f"theta must have shape ({self.basis.m},), got {theta.shape}")
        return self.basis.mean + self._elem_modes @ theta

    def heads(self, theta) -> np.ndarray:
        return solve_darcy(self.mesh, np.exp(self.log_transmissivity(theta)))

    def __call__(self, theta) -> np.ndarray:
        self.calls += 1
        return self._obs @ self.heads(theta)


class DarcyProblem:
    """All mesh levels sharing one KL basis; the last level is the high-fidelity model."""

    def __init__(
        self,
        meshes: Sequence[int] = DESK_MESHES,
        sigma: float = KL_SIGMA,
        corr_length: float = KL_CORR_LENGTH,
        m: int = KL_MODES,
        mean: float = KL_MEAN,
        sensors: SensorSet = DEFAULT_SENSORS,
        ref_n: int | None = None,
        cache_dir=None,
    ):
        self.meshes = tuple(int(n) for n in meshes)
        if list(self.meshes) != sorted(set(self.meshes)):
            raise ValueError("mesh sizes must be strictly increasing")
        ref = ref_n or self.meshes[-1]
        self.basis = build_kl_basis(ref, sigma, corr_length, m, mean, cache_dir=cache_dir)
        self.levels = [DarcyLevel(n, self.basis, sensors) for n in self.meshes]
        self.sensors = sensors

    @property
    def dim(self) -> int:
        return self.basis.m

    @property
    def n_obs(self) -> int:
        return self.sensors.d

    @property
    def lf_levels(self) -> list[DarcyLevel]:
        return self.levels[:-1]

    @property
    def hf(self) -> DarcyLevel:
        return self.levels[-1]

    def model(self, level: int) -> DarcyLevel:
        """Level ``1..len(meshes)``; the largest index is the high-fidelity model."""
        if not 1 <= level <= len(self.levels):
            raise ValueError(f"level must be in 1..{len(self.levels)}")
        return self.levels[level - 1]


def darcy_level_model(problem: DarcyProblem, level: int, theta) -> np.ndarray:
    return problem.model(level)(theta)
