"""Proper orthogonal decomposition of solution snapshots.

Snapshots are stored column-wise (both species stacked in one vector). The
basis consists of the leading left singular vectors, truncated at the smallest
rank whose squared singular values reach a given share of the total energy.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .rd import RDSeries

__all__ = [
    "PODBasis",
    "build_pod",
    "energy_rank",
    "project",
    "lift",
    "reduce_lf",
    "save_basis",
    "load_basis",
]


@dataclass
class PODBasis:
    """Orthonormal modes ``Phi`` (columns) with the full singular spectrum."""

    Phi: np.ndarray
    singular_values: np.ndarray
    r: int
    energy: float
    threshold: float = 0.95
    provenance: str = ""
    mean: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return self.Phi.shape[0]

    def energy_curve(self) -> np.ndarray:
        s2 = self.singular_values**2
        return np.cumsum(s2) / s2.sum()


def energy_rank(singular_values, threshold: float) -> int:
    """Smallest ``r`` with ``sum_{i<=r} s_i^2 / sum s_i^2 >= threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("energy threshold must lie in (0, 1]")
    s2 = np.asarray(singular_values, float) ** 2
    total = s2.sum()
    if total <= 0:
        raise ValueError("snapshots carry no energy")
    frac = np.cumsum(s2) / total
    if threshold == 1.0:
        # numerical rank: drop values at round-off level
        tol = s2.size * np.finfo(float).eps * np.sqrt(s2[0])
        return int(np.count_nonzero(np.sqrt(s2) > tol))
    # guard against the cumulative sum stopping a hair short of the threshold
    return int(min(np.searchsorted(frac, threshold - 1e-14) + 1, s2.size))


def _thin_svd_gram(S: np.ndarray):
    """Left singular vectors through the eigendecomposition of ``S^T S``."""
    G = S.T @ S
    vals, V = np.linalg.eigh(G)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    V = V[:, order]
    s = np.sqrt(vals)
    keep = s > s[0] * S.shape[1] * np.finfo(float).eps * 10 if s[0] > 0 else s > 0
    U = (S @ V[:, keep]) / s[keep]
    return U, s


def build_pod(
    snapshots,
    energy_threshold: float = 0.95,
    method: str = "auto",
    subtract_mean: bool = False,
    min_rank: int = 0,
) -> PODBasis:
    """POD basis of the columns of ``snapshots``.

    ``method`` is ``"svd"``, ``"gram"`` (eigendecomposition of the smaller
    Gram matrix, re-orthonormalized) or ``"auto"`` (Gram when there are
    fewer columns than rows). The rank is the energy rank, raised to
    ``min_rank`` when that is larger.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.size == 0:
        raise ValueError("snapshots must be a non-empty 2-D array")
    if not np.isfinite(S).all():
        raise ValueError("snapshots contain non-finite values")
    mean = None
    if subtract_mean:
        mean = S.mean(axis=1)
        S = S - mean[:, None]
    if method == "auto":
        method = "gram" if S.shape[0] > S.shape[1] else "svd"
    if method == "svd":
        try:
            U, s, _ = np.linalg.svd(S, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("SVD of the snapshot matrix failed") from exc
    elif method == "gram":
        U, s = _thin_svd_gram(S)
    else:
        raise ValueError(f"unknown POD method {method!r}")
    r = min(max(energy_rank(s, energy_threshold), int(min_rank)), U.shape[1])
    Phi = U[:, :r]
    if method == "gram":
        # one QR pass restores orthonormality lost to squaring the condition number
        Q, R = np.linalg.qr(Phi)
        Phi = Q * np.sign(np.diag(R))
    s2 = s**2
    digest = hashlib.sha256(np.ascontiguousarray(S).tobytes()).hexdigest()
    return PODBasis(
        Phi=np.ascontiguousarray(Phi),
        singular_values=s,
        r=r,
        energy=float(s2[:r].sum() / s2.sum()),
        threshold=energy_threshold,
        provenance=digest,
        mean=mean,
        meta={"method": method, "n_snapshots": S.shape[1]},
    )


def project(basis: PODBasis, fields) -> np.ndarray:
    """``Phi^T (x - mean)`` for a vector or for each column of a matrix."""
    x = np.asarray(fields, float)
    if x.shape[0] != basis.n_dof:
        raise ValueError(f"field has {x.shape[0]} entries, basis has {basis.n_dof}")
    if basis.mean is not None:
        x = x - (basis.mean if x.ndim == 1 else basis.mean[:, None])
    return basis.Phi.T @ x


def lift(basis: PODBasis, coefficients) -> np.ndarray:
    c = np.asarray(coefficients, float)
    if c.shape[0] != basis.r:
        raise ValueError(f"expected {basis.r} coefficients, got {c.shape[0]}")
    x = basis.Phi @ c
    if basis.mean is not None:
        x = x + (basis.mean if x.ndim == 1 else basis.mean[:, None])
    return x


def reduce_lf(series_hf: RDSeries, basis: PODBasis, start: int = 1) -> np.ndarray:
    """Reduced trajectory ``Phi^T I(g)``, shape ``(r, n_times)``.

    ``series_hf`` must already be on the high-fidelity grid and timebase
    (see :func:`mfda.rd.interpolate_to_hf`); ``t = 0`` is skipped by default.
    """
    return project(basis, series_hf.snapshots(start))


def save_basis(basis: PODBasis, path) -> None:
    """Modes as flat little-endian float64 at ``path``, header at ``path + '.json'``."""
    path = os.fspath(path)
    basis.Phi.astype("<f8").tofile(path + ".tmp")
    os.replace(path + ".tmp", path)
    if basis.mean is not None:
        basis.mean.astype("<f8").tofile(path + ".mean.tmp")
        os.replace(path + ".mean.tmp", path + ".mean")
    hdr = {
        "n_dof": basis.n_dof,
        "r": basis.r,
        "energy": basis.energy,
        "threshold": basis.threshold,
        "singular_values": basis.singular_values.tolist(),
        "provenance": basis.provenance,
        "has_mean": basis.mean is not None,
        "meta": basis.meta,
    }
    with open(path + ".json.tmp", "w") as fh:
        json.dump(hdr, fh)
    os.replace(path + ".json.tmp", path + ".json")


def load_basis(path) -> PODBasis:
    path = os.fspath(path)
    with open(path + ".json") as fh:
        hdr = json.load(fh)
    Phi = np.fromfile(path, dtype="<f8").reshape(hdr["n_dof"], hdr["r"])
    mean = np.fromfile(path + ".mean", dtype="<f8") if hdr.get("has_mean") else None
    return PODBasis(
        Phi=Phi,
        singular_values=np.array(hdr["singular_values"]),
        r=hdr["r"],
        energy=hdr["energy"],
        threshold=hdr["threshold"],
        provenance=hdr["provenance"],
        mean=mean,
        meta=hdr.get("meta", {}),
    )
