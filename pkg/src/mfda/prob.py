"""Probability primitives shared by the samplers.

Priors, the isotropic Gaussian likelihood, symmetric Gaussian random-walk
proposals, Metropolis acceptance and Latin hypercube sampling. Every random
draw goes through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OUT_OF_SUPPORT",
    "Prior",
    "StandardNormalPrior",
    "UniformBoxPrior",
    "NoiseModel",
    "Proposal",
    "make_rng",
    "log_prior",
    "log_likelihood",
    "propose",
    "proposal_log_density",
    "mh_accept_prob",
    "accept",
    "latin_hypercube",
    "sample_standard_normal_vector",
]

#: Log-density marker for parameters outside the prior support.
OUT_OF_SUPPORT = -math.inf

_PIVOT_TOL = 1e-14


def make_rng(seed: int | None) -> np.random.Generator:
    """PCG64 generator seeded with a 64-bit unsigned integer."""
    if seed is not None and not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(seed)


class Prior:
    dim: int

    def log_density(self, x) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected parameter of shape ({self.dim},), got {x.shape}")
        return x


@dataclass(frozen=True)
class StandardNormalPrior(Prior):
    """i.i.d. N(0, 1) prior in ``dim`` dimensions (normalized)."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("prior dimension must be >= 1")

    def log_density(self, x) -> float:
        x = self._check(x)
        return float(-0.5 * self.dim * math.log(2.0 * math.pi) - 0.5 * x @ x)

    def sample(self, rng):
        return sample_standard_normal_vector(self.dim, rng)

    def precision(self) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True)
class UniformBoxPrior(Prior):
    """Uniform prior on the open box ``lower < x < upper``.

    Returns 0 inside the box (the normalizing constant is dropped) and
    :data:`OUT_OF_SUPPORT` outside.
    """

    lower: np.ndarray
    upper: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("uniform box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "dim", lo.size)

    def log_density(self, x) -> float:
        x = self._check(x)
        if np.all(x > self.lower) and np.all(x < self.upper):
            return 0.0
        return OUT_OF_SUPPORT

    def sample(self, rng):
        return rng.uniform(self.lower, self.upper)

    def precision(self) -> None:
        return None


def log_prior(prior: Prior, x) -> float:
    return prior.log_density(x)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian noise with covariance ``sigma**2 * I_dim``."""

    sigma: float
    dim: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"noise sigma must be positive, got {self.sigma}")
        if self.dim < 1:
            raise ValueError("observation dimension must be >= 1")


def log_likelihood(y_pred, y_obs, noise: NoiseModel) -> float:
    """Unnormalized Gaussian log-likelihood ``-0.5 * ||(y_pred - y_obs) / sigma||^2``."""
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    y_obs = np.asarray(y_obs, dtype=float).ravel()
    if not noise.sigma > 0:
        raise ValueError("noise sigma must be positive")
    if y_pred.size != noise.dim or y_obs.size != noise.dim:
        raise ValueError(
            f"dimension mismatch: y_pred {y_pred.size}, y_obs {y_obs.size}, noise {noise.dim}"
        )
    r = (y_pred - y_obs) / noise.sigma
    return float(-0.5 * (r @ r))


class Proposal:
    """Symmetric Gaussian random walk ``x' = x + scale * L z``.

    ``L`` is the lower Cholesky factor of ``covariance``; a pivot at or below
    1e-14 is treated as a factorization failure.
    """

    def __init__(self, covariance, scale: float = 1.0):
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("proposal covariance must be a square matrix")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("proposal covariance must be symmetric")
        if scale < 0:
            raise ValueError("proposal scale must be non-negative")
        self.covariance = cov
        self.scale = float(scale)
        self.chol = _cholesky(cov)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @classmethod
    def isotropic(cls, dim: int, step: float = 1.0) -> "Proposal":
        return cls(np.eye(dim), scale=step)


def _cholesky(a: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("proposal covariance is not positive definite") from exc
    if np.any(np.diag(chol) ** 2 <= _PIVOT_TOL):
        raise np.linalg.LinAlgError("proposal covariance is numerically singular")
    return chol


def propose(current, prop: Proposal, rng: np.random.Generator) -> np.ndarray:
    current = np.asarray(current, dtype=float)
    if current.shape != (prop.dim,):
        raise ValueError(f"expected state of shape ({prop.dim},), got {current.shape}")
    z = rng.standard_normal(prop.dim)
    return current + prop.scale * (prop.chol @ z)


def proposal_log_density(to, frm, prop: Proposal) -> float:
    """Log density of moving from ``frm`` to ``to``; symmetric in its arguments."""
    if prop.scale == 0:
        raise ValueError("degenerate proposal has no density")
    d = np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)
    # solve L u = d; the quadratic form depends on d only through d d^T
    u = np.linalg.solve(prop.chol * prop.scale, d)
    logdet = 2.0 * np.sum(np.log(np.diag(prop.chol) * prop.scale))
    return float(-0.5 * (u @ u) - 0.5 * logdet - 0.5 * prop.dim * math.log(2.0 * math.pi))


def mh_accept_prob(log_post_new: float, log_post_old: float) -> float:
    if log_post_new == OUT_OF_SUPPORT or math.isnan(log_post_new):
        return 0.0
    delta = log_post_new - log_post_old
    if delta >= 0:
        return 1.0
    return math.exp(delta)


def accept(alpha: float, rng: np.random.Generator) -> bool:
    """Bernoulli(alpha) decision that draws a uniform only when ``alpha < 1``.

    Skipping the draw for certain acceptances keeps the random stream of a
    multilevel chain with exact coarse levels aligned with plain MH.
    """
    if alpha >= 1.0:
        return True
    if alpha <= 0.0:
        return False
    return bool(rng.random() < alpha)


def latin_hypercube(n: int, lower, upper, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in the box with exactly one point per stratum on every axis.

    Returns an ``(n, dim)`` array.
    """
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if n < 1:
        raise ValueError("latin_hypercube needs n >= 1")
    if lo.shape != hi.shape or not np.all(lo < hi):
        raise ValueError("invalid bounds: need lower < upper componentwise")
    dim = lo.size
    u = np.empty((n, dim))
    for k in range(dim):
        strata = rng.permutation(n)
        u[:, k] = (strata + rng.random(n)) / n
    # guard against u == 1.0 after rounding
    np.clip(u, 0.0, np.nextafter(1.0, 0.0), out=u)
    return lo + u * (hi - lo)


def sample_standard_normal_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    return rng.standard_normal(dim)
