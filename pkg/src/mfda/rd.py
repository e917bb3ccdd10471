"""Two-species lambda-omega reaction-diffusion system on a periodic square.

    u_t = (1 - r^2) u + mu1 r^2 v + mu2 lap(u)
    v_t = -mu1 r^2 u + (1 - r^2) v + mu2 lap(v),    r^2 = u^2 + v^2

on (-L, L)^2 with L = 20. Diffusion is applied exactly in Fourier space
through an integrating factor; the cubic reaction terms are evaluated in
physical space and advanced with classical RK4.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

logger = logging.getLogger(__name__)

__all__ = [
    "SpectralGrid",
    "RDParams",
    "RDSeries",
    "SensorGridRD",
    "RDLevel",
    "RDProblem",
    "RDInstability",
    "PARAM_LOWER",
    "PARAM_UPPER",
    "FULL_LEVELS",
    "DESK_LEVELS",
    "initial_condition",
    "integrate_rd",
    "observe_rd",
    "interpolate_to_hf",
    "save_snapshots",
    "load_snapshots",
    "spatial_interp_matrix",
    "resample_time",
]

HALF_WIDTH = 20.0
T_END = 50.0
N_OBS_STEPS = 250
PARAM_LOWER = np.array([0.5, 0.01])
PARAM_UPPER = np.array([1.5, 0.1])

# (grid points per axis, output steps, internal substeps per output step); the
# last entry is the high-fidelity model. RK4 on the reaction terms is unstable
# at dt = 1 for part of the parameter box, hence two substeps on the coarsest grid.
FULL_LEVELS = ((16, 50, 2), (32, 100, 1), (64, 250, 1), (128, 250, 1))
DESK_LEVELS = ((16, 50, 2), (32, 100, 1), (64, 250, 1))


class RDInstability(FloatingPointError):
    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (t = {time:g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SpectralGrid:
    """Periodic grid ``x_j = -L + j * 2L / n`` with matching rfft2 wavenumbers."""

    n: int
    L: float = HALF_WIDTH

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two, got {self.n}")
        if self.L <= 0:
            raise ValueError("half-width must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi / (2.0 * self.L) * np.fft.fftfreq(self.n, d=1.0 / self.n)

    @property
    def k_r(self) -> np.ndarray:
        return 2.0 * np.pi / (2.0 * self.L) * np.fft.rfftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` on the rfft2 layout (axis 0 = y, axis 1 = x)."""
        return self.k[:, None] ** 2 + self.k_r[None, :] ** 2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``X, Y`` arrays indexed ``[iy, ix]``."""
        return np.meshgrid(self.x, self.x, indexing="xy")

    def to_spectral(self, f):
        return np.fft.rfft2(f)

    def to_physical(self, fh):
        return np.fft.irfft2(fh, s=(self.n, self.n))


@dataclass(frozen=True)
class RDParams:
    mu1: float
    mu2: float

    def __post_init__(self):
        if not (PARAM_LOWER[0] <= self.mu1 <= PARAM_UPPER[0] and PARAM_LOWER[1] <= self.mu2 <= PARAM_UPPER[1]):
            raise ValueError(f"parameters ({self.mu1}, {self.mu2}) outside the admissible box")

    @classmethod
    def from_vector(cls, mu) -> "RDParams":
        mu = np.asarray(mu, float).ravel()
        if mu.size != 2:
            raise ValueError("expected a 2-vector (mu1, mu2)")
        return cls(float(mu[0]), float(mu[1]))


@dataclass
class RDSeries:
    """States at ``times``; ``data`` has shape ``(n_times, 2, n, n)`` with species (u, v)."""

    grid: SpectralGrid
    times: np.ndarray
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def u(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[:, 1]

    def snapshots(self, start: int = 1) -> np.ndarray:
        """Vectorized states (u then v) as columns, from output ``start`` on."""
        d = self.data[start:]
        return d.reshape(d.shape[0], -1).T


IC_FORMS = ("literal", "amplitude-phase")


def initial_condition(grid: SpectralGrid, form: str = "literal") -> tuple[np.ndarray, np.ndarray]:
    """One-armed spiral initial state.

    ``"literal"`` is ``u = v = tanh(r cos(angle - r))``. Its fronts sharpen
    like ``1/r`` and are not resolved on any grid up to 256 points per axis.
    ``"amplitude-phase"`` is ``u + i v = tanh(r) exp(i (angle - r))``, the
    smooth spiral whose solutions converge under grid refinement.
    """
    X, Y = grid.mesh()
    r = np.hypot(X, Y)
    phase = np.angle(X + 1j * Y) - r
    if form == "literal":
        u = np.tanh(r * np.cos(phase))
        return u, u.copy()
    if form == "amplitude-phase":
        a = np.tanh(r)
        return a * np.cos(phase), a * np.sin(phase)
    raise ValueError(f"unknown initial condition {form!r}; expected one of {IC_FORMS}")


def _reaction(uh, vh, mu1, grid):
    u = grid.to_physical(uh)
    v = grid.to_physical(vh)
    r2 = u * u + v * v
    a = 1.0 - r2
    b = mu1 * r2
    return grid.to_spectral(a * u + b * v), grid.to_spectral(a * v - b * u)


def integrate_rd(
    grid: SpectralGrid,
    params: RDParams,
    t_end: float = T_END,
    n_output_steps: int = N_OBS_STEPS,
    substeps: int = 1,
    u0=None,
    v0=None,
    ic: str = "literal",
) -> RDSeries:
    """Integrating-factor RK4; ``substeps`` internal steps per output interval.

    Starts from ``(u0, v0)`` when given, else from ``initial_condition(grid, ic)``.
    Returns ``n_output_steps + 1`` states including ``t = 0``.
    """
    if n_output_steps < 1 or substeps < 1:
        raise ValueError("step counts must be positive")
    if u0 is None:
        u0, v0 = initial_condition(grid, ic)
    u0 = np.asarray(u0, float)
    v0 = np.asarray(v0, float)
    if u0.shape != (grid.n, grid.n) or v0.shape != (grid.n, grid.n):
        raise ValueError("initial fields do not match the grid")
    dt = t_end / (n_output_steps * substeps)
    E = np.exp(-params.mu2 * grid.k2 * dt / 2.0)
    E2 = E * E
    mu1 = params.mu1
    out = np.empty((n_output_steps + 1, 2, grid.n, grid.n))
    out[0, 0], out[0, 1] = u0, v0
    uh, vh = grid.to_spectral(u0), grid.to_spectral(v0)
    h2 = dt / 2.0
    # blow-up is detected below and reported as RDInstability
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_output_steps + 1):
            for _ in range(substeps):
                k1u, k1v = _reaction(uh, vh, mu1, grid)
                k2u, k2v = _reaction(E * (uh + h2 * k1u), E * (vh + h2 * k1v), mu1, grid)
                k3u, k3v = _reaction(E * uh + h2 * k2u, E * vh + h2 * k2v, mu1, grid)
                k4u, k4v = _reaction(E2 * uh + dt * E * k3u, E2 * vh + dt * E * k3v, mu1, grid)
                uh = E2 * uh + dt / 6.0 * (E2 * k1u + 2.0 * E * (k2u + k3u) + k4u)
                vh = E2 * vh + dt / 6.0 * (E2 * k1v + 2.0 * E * (k2v + k3v) + k4v)
            out[step, 0] = grid.to_physical(uh)
            out[step, 1] = grid.to_physical(vh)
            if not (np.isfinite(out[step]).all()):
                raise RDInstability(step, step * t_end / n_output_steps)
    times = np.linspace(0.0, t_end, n_output_steps + 1)
    meta = {"n": grid.n, "dt": dt, "substeps": substeps, "mu": [params.mu1, params.mu2], "ic": ic}
    return RDSeries(grid, times, out, meta)


@dataclass(frozen=True)
class SensorGridRD:
    """A ``k x k`` lattice of cell-centred points over the periodic square."""

    k: int = 13
    L: float = HALF_WIDTH

    @property
    def locations_1d(self) -> np.ndarray:
        return -self.L + (np.arange(self.k) + 0.5) * 2.0 * self.L / self.k

    def indices(self, grid: SpectralGrid) -> np.ndarray:
        """Nearest-node 1-D indices on ``grid`` (periodic)."""
        return np.rint((self.locations_1d + grid.L) / grid.dx).astype(int) % grid.n

    def flat_indices(self, grid: SpectralGrid) -> np.ndarray:
        """Flat node indices into an ``n x n`` field, row-major over ``(y, x)``."""
        idx = self.indices(grid)
        return (idx[:, None] * grid.n + idx[None, :]).ravel()

    @property
    def n_sensors(self) -> int:
        return 2 * self.k * self.k


def observe_rd(series: RDSeries, sensors: SensorGridRD = SensorGridRD(), n_times: int | None = None) -> np.ndarray:
    """Sensor matrix: rows are u sensors (row-major) then v sensors; columns are
    output times after ``t = 0``."""
    n_avail = series.data.shape[0] - 1
    n_times = n_avail if n_times is None else n_times
    if n_avail < n_times:
        raise ValueError(f"series has {n_avail} outputs, {n_times} requested")
    flat = sensors.flat_indices(series.grid)
    d = series.data[1:n_times + 1].reshape(n_times, 2, -1)[:, :, flat]
    return d.transpose(1, 2, 0).reshape(2 * flat.size, n_times)


def _periodic_linear_matrix(n_from: int, n_to: int) -> sp.csr_matrix:
    pos = np.arange(n_to) * (n_from / n_to)
    i0 = np.floor(pos).astype(int)
    w = pos - i0
    rows = np.repeat(np.arange(n_to), 2)
    cols = np.column_stack([i0 % n_from, (i0 + 1) % n_from]).ravel()
    vals = np.column_stack([1.0 - w, w]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_to, n_from))


def interpolate_to_hf(series: RDSeries, to_grid: SpectralGrid, to_times) -> RDSeries:
    """Bilinear periodic interpolation in space, natural cubic spline in time."""
    fg = series.grid
    if fg.n > to_grid.n:
        raise ValueError("source grid is finer than the target grid")
    if fg.L != to_grid.L:
        raise ValueError("grids cover different domains")
    to_times = np.asarray(to_times, float)
    data = series.data
    if fg.n != to_grid.n:
        P = _periodic_linear_matrix(fg.n, to_grid.n).toarray()
        # (t, s, y, x) -> P data P^T on the last two axes
        data = np.einsum("Yy,tsyx,Xx->tsYX", P, data, P, optimize=True)
    if not (series.times.shape == to_times.shape and np.allclose(series.times, to_times, rtol=0, atol=1e-12)):
        data = CubicSpline(series.times, data, axis=0, bc_type="natural")(to_times)
    return RDSeries(to_grid, to_times, np.ascontiguousarray(data), dict(series.meta, interpolated=True))


# -- snapshot dumps --------------------------------------------------------------


def save_snapshots(path, series: RDSeries, params: RDParams | None = None) -> None:
    """Flat float64 array at ``path`` plus a JSON header at ``path + '.json'``."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    series.data.astype("<f8").tofile(tmp)
    os.replace(tmp, path)
    hdr = {
        "n": series.grid.n,
        "L": series.grid.L,
        "times": series.times.tolist(),
        "shape": list(series.data.shape),
        "dtype": "<f8",
        "params": None if params is None else [params.mu1, params.mu2],
        "meta": series.meta,
    }
    with open(path + ".json.tmp", "w") as fh:
        json.dump(hdr, fh)
    os.replace(path + ".json.tmp", path + ".json")


def load_snapshots(path) -> RDSeries:
    path = os.fspath(path)
    with open(path + ".json") as fh:
        hdr = json.load(fh)
    data = np.fromfile(path, dtype=hdr["dtype"]).reshape(hdr["shape"])
    return RDSeries(SpectralGrid(hdr["n"], hdr["L"]), np.array(hdr["times"]), data, hdr.get("meta", {}))


# -- level models ----------------------------------------------------------------


class RDLevel:
    """One resolution of the solver; calls return the full-field series."""

    def __init__(self, n: int, n_steps: int, substeps: int = 1, t_end: float = T_END,
                 ic: str = "amplitude-phase"):
        self.grid = SpectralGrid(n)
        self.n_steps = n_steps
        self.substeps = substeps
        self.t_end = t_end
        self.ic = ic
        self.calls = 0

    def solve(self, mu) -> RDSeries:
        self.calls += 1
        return integrate_rd(self.grid, RDParams.from_vector(mu), self.t_end, self.n_steps,
                            self.substeps, ic=self.ic)

    __call__ = solve


def spatial_interp_matrix(from_grid: SpectralGrid, to_grid: SpectralGrid) -> sp.csr_matrix:
    """Bilinear periodic map between flattened ``n x n`` fields (row-major ``(y, x)``)."""
    P = _periodic_linear_matrix(from_grid.n, to_grid.n)
    return sp.kron(P, P, format="csr")


def resample_time(values: np.ndarray, from_times, to_times) -> np.ndarray:
    """Natural cubic spline along the last axis (identity when the timebases agree)."""
    from_times = np.asarray(from_times, float)
    to_times = np.asarray(to_times, float)
    if from_times.shape == to_times.shape and np.allclose(from_times, to_times, rtol=0, atol=1e-12):
        return values
    return CubicSpline(from_times, values, axis=-1, bc_type="natural")(to_times)


class RDProblem:
    """Solver hierarchy; the last level defines the high-fidelity grid and timebase.

    Level outputs are mapped to the high-fidelity grid and timebase (operator
    I) before sensors are read or POD coefficients are taken. Both maps are
    linear, so they are applied on the coarse grid through precomputed
    matrices followed by a spline in time.
    """

    dim = 2

    def __init__(
        self,
        levels: Sequence[Sequence[int]] = DESK_LEVELS,
        sensors: SensorGridRD = SensorGridRD(),
        t_end: float = T_END,
        ic: str = "amplitude-phase",
    ):
        if ic not in IC_FORMS:
            raise ValueError(f"unknown initial condition {ic!r}")
        self.ic = ic
        self.levels = []
        for spec in levels:
            n, steps, *rest = spec
            self.levels.append(RDLevel(int(n), int(steps), int(rest[0]) if rest else 1, t_end, ic))
        self.sensors = sensors
        self.t_end = t_end
        hf = self.levels[-1]
        self.hf_grid = hf.grid
        self.hf_times = np.linspace(0.0, t_end, hf.n_steps + 1)
        self._sensor_ops: dict[int, sp.csr_matrix] = {}
        self._reduce_ops: dict[tuple[int, int], np.ndarray] = {}

    @property
    def lf_levels(self) -> list[RDLevel]:
        return self.levels[:-1]

    @property
    def hf(self) -> RDLevel:
        return self.levels[-1]

    @property
    def n_times(self) -> int:
        return self.hf.n_steps

    @property
    def n_obs(self) -> int:
        return self.sensors.n_sensors * self.n_times

    def to_hf(self, series: RDSeries) -> RDSeries:
        return interpolate_to_hf(series, self.hf_grid, self.hf_times)

    def _spatial(self, grid: SpectralGrid) -> sp.csr_matrix:
        return spatial_interp_matrix(grid, self.hf_grid)

    def _sensor_op(self, grid: SpectralGrid) -> sp.csr_matrix:
        op = self._sensor_ops.get(grid.n)
        if op is None:
            rows = self._spatial(grid)[self.sensors.flat_indices(self.hf_grid)]
            op = self._sensor_ops[grid.n] = sp.block_diag([rows, rows], format="csr")
        return op

    def sensor_output(self, series: RDSeries) -> np.ndarray:
        """Sensor matrix ``(338, T)`` of ``I(series)`` at the output times after ``t = 0``."""
        flat = series.data.reshape(series.data.shape[0], -1).T
        vals = self._sensor_op(series.grid) @ flat
        return resample_time(vals, series.times, self.hf_times)[:, 1:]

    def reduce_op(self, grid: SpectralGrid, Phi: np.ndarray) -> np.ndarray:
        """``Phi^T`` pulled back to ``grid``: ``(r, 2 n^2)``."""
        key = (grid.n, id(Phi))
        op = self._reduce_ops.get(key)
        if op is None:
            K = self._spatial(grid)
            N = self.hf_grid.n ** 2
            op = np.hstack([(K.T @ Phi[:N]).T, (K.T @ Phi[N:]).T])
            self._reduce_ops[key] = op
        return op

    def reduced_output(self, series: RDSeries, Phi: np.ndarray) -> np.ndarray:
        """``Phi^T I(series)`` at the output times after ``t = 0``: ``(r, T)``."""
        flat = series.data.reshape(series.data.shape[0], -1).T
        z = self.reduce_op(series.grid, Phi) @ flat
        return resample_time(z, series.times, self.hf_times)[:, 1:]

    def observe_level(self, level: int, mu) -> np.ndarray:
        """``f^(level)(mu)`` for ``level`` in ``1..len(levels)``."""
        return self.sensor_output(self.levels[level - 1].solve(mu))
