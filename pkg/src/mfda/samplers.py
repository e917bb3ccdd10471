"""Metropolis-Hastings, multilevel delayed acceptance and its multi-fidelity variant.

One recursive engine drives all three samplers. A level ``l >= 1`` takes
its proposal from the end state of a sub-chain of length ``J_{l-1}`` run at
level ``l - 1`` started from the current level-``l`` state; the coarser levels
are therefore reset after every level-``l`` decision. The coarsest level is a
plain random-walk Metropolis chain on ``log L_0 + log prior``. Above it the
acceptance ratio only involves likelihoods::

    alpha_l = min(1, L_l(x') L_{l-1}(x) / (L_l(x) L_{l-1}(x')))

The multi-fidelity variant runs the same recursion with every level backed by a
neural-network-corrected likelihood that reads low-fidelity solver outputs from
a shared per-chain cache.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .prob import (
    OUT_OF_SUPPORT,
    NoiseModel,
    Prior,
    Proposal,
    accept,
    log_likelihood,
    mh_accept_prob,
    propose,
)

logger = logging.getLogger(__name__)

__all__ = [
    "LevelSpec",
    "FidelityStack",
    "Chain",
    "EvalCache",
    "SamplerError",
    "MultilevelSampler",
    "run_mh",
    "run_mlda",
    "run_mfda",
    "mlda_level_accept",
    "discard_burn_in",
    "LeastSquaresInit",
    "init_from_least_squares",
    "GN_SCALE",
]

#: Random-walk scaling factor applied to the Gauss-Newton covariance (times 1/dim).
GN_SCALE = 2.38**2


class SamplerError(RuntimeError):
    """Likelihood evaluation failed inside a chain."""


@dataclass
class LevelSpec:
    log_likelihood_fn: Callable[[np.ndarray], float]
    subchain_length: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.subchain_length is not None and self.subchain_length < 1:
            raise ValueError("sub-chain length must be >= 1")


@dataclass
class FidelityStack:
    """Levels ordered coarsest first; every level but the last needs a sub-chain length."""

    levels: list[LevelSpec]
    prior: Prior
    proposal: Proposal

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a fidelity stack needs at least one level")
        for lvl in self.levels[:-1]:
            if lvl.subchain_length is None:
                raise ValueError(f"level {lvl.label!r} needs a sub-chain length")
        if self.proposal.dim != self.prior.dim:
            raise ValueError("proposal and prior dimensions differ")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def subchain_lengths(self) -> list[int]:
        return [lvl.subchain_length for lvl in self.levels[:-1]]


@dataclass
class Chain:
    """Fine-level samples plus per-level bookkeeping.

    ``samples[k]`` is the state after the k-th fine decision; ``theta0`` is not
    included.
    """

    samples: np.ndarray
    log_likelihoods: np.ndarray
    accepted: np.ndarray
    per_level_accept_counts: np.ndarray
    per_level_proposal_counts: np.ndarray
    wall_time: float
    level_labels: list[str] = field(default_factory=list)
    evaluations: np.ndarray | None = None
    requests: np.ndarray | None = None
    alphas: list[np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def acceptance_rates(self) -> np.ndarray:
        props = np.maximum(self.per_level_proposal_counts, 1)
        return self.per_level_accept_counts / props

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self) else float("nan")


def discard_burn_in(chain: Chain | np.ndarray, fraction: float = 0.2) -> np.ndarray:
    """Samples with the leading ``fraction`` of the chain removed."""
    samples = chain.samples if isinstance(chain, Chain) else np.asarray(chain)
    start = int(math.floor(fraction * samples.shape[0]))
    return samples[start:]


class EvalCache:
    """Stores solver outputs keyed by the exact bytes of the parameter vector.

    One store per level. ``hits``/``misses`` count lookups per level.
    """

    def __init__(self, maxsize: int | None = None):
        self.maxsize = maxsize
        self._store: dict[int, OrderedDict] = {}
        self.hits: dict[int, int] = {}
        self.misses: dict[int, int] = {}

    @staticmethod
    def key(theta) -> bytes:
        return np.ascontiguousarray(theta, dtype=np.float64).tobytes()

    def get_or_compute(self, level: int, theta, fn):
        store = self._store.setdefault(level, OrderedDict())
        k = self.key(theta)
        if k in store:
            self.hits[level] = self.hits.get(level, 0) + 1
            if self.maxsize is not None:
                store.move_to_end(k)
            return store[k]
        self.misses[level] = self.misses.get(level, 0) + 1
        value = fn(theta)
        store[k] = value
        if self.maxsize is not None and len(store) > self.maxsize:
            store.popitem(last=False)
        return value

    def __contains__(self, item) -> bool:
        level, theta = item
        return self.key(theta) in self._store.get(level, {})

    def size(self, level: int) -> int:
        return len(self._store.get(level, {}))

    def stats(self) -> dict:
        levels = sorted(set(self.hits) | set(self.misses))
        return {
            str(l): {"hits": self.hits.get(l, 0), "misses": self.misses.get(l, 0)} for l in levels
        }


class _Point:
    """A parameter vector with the level log-likelihoods known so far."""

    __slots__ = ("theta", "log_prior", "loglik")

    def __init__(self, theta, log_prior):
        self.theta = theta
        self.log_prior = log_prior
        self.loglik: dict[int, float] = {}


def mlda_level_accept(logL_l_new, logL_l_old, logL_lm1_old, logL_lm1_new) -> float:
    """Delayed-acceptance probability at a level above the coarsest."""
    if logL_l_new == OUT_OF_SUPPORT or logL_lm1_new == OUT_OF_SUPPORT:
        return 0.0
    log_ratio = (logL_l_new - logL_l_old) + (logL_lm1_old - logL_lm1_new)
    if math.isnan(log_ratio):
        return 0.0
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


class MultilevelSampler:
    """Resumable multilevel chain over a :class:`FidelityStack`.

    With a single level this is random-walk Metropolis-Hastings. ``sample(n)``
    may be called repeatedly; results accumulate in :meth:`chain`.
    """

    def __init__(self, stack: FidelityStack, theta0, rng: np.random.Generator):
        self.stack = stack
        self.rng = rng
        L = stack.n_levels
        theta0 = np.array(theta0, dtype=float)
        lp = stack.prior.log_density(theta0)
        if lp == OUT_OF_SUPPORT:
            raise ValueError("initial state lies outside the prior support")
        self.current = _Point(theta0, lp)
        self._top = L - 1
        self.evaluations = np.zeros(L, dtype=np.int64)
        self.requests = np.zeros(L, dtype=np.int64)
        self.accepts = np.zeros(L, dtype=np.int64)
        self.proposals = np.zeros(L, dtype=np.int64)
        self._alphas: list[list[float]] = [[] for _ in range(L)]
        self._samples: list[np.ndarray] = []
        self._loglik: list[float] = []
        self._accepted: list[bool] = []
        self._wall = 0.0
        self._fine_index = -1
        self._loglike(self.current, self._top)

    def _loglike(self, point: _Point, level: int) -> float:
        self.requests[level] += 1
        val = point.loglik.get(level)
        if val is not None:
            return val
        try:
            val = float(self.stack.levels[level].log_likelihood_fn(point.theta))
        except Exception as exc:
            raise SamplerError(
                f"level {level} ({self.stack.levels[level].label}) likelihood failed "
                f"at fine sample {self._fine_index + 1}: {exc}"
            ) from exc
        self.evaluations[level] += 1
        point.loglik[level] = val
        return val

    def _mh_step(self, cur: _Point) -> _Point:
        prop = self.stack.proposal
        theta_new = propose(cur.theta, prop, self.rng)
        lp = self.stack.prior.log_density(theta_new)
        self.proposals[0] += 1
        if lp == OUT_OF_SUPPORT:
            self._alphas[0].append(0.0)
            return cur
        new = _Point(theta_new, lp)
        old_post = self._loglike(cur, 0) + cur.log_prior
        new_post = self._loglike(new, 0) + lp
        alpha = mh_accept_prob(new_post, old_post)
        self._alphas[0].append(alpha)
        if accept(alpha, self.rng):
            self.accepts[0] += 1
            return new
        return cur

    def _da_step(self, level: int, cur: _Point) -> _Point:
        cand = self._subchain(level - 1, cur)
        self.proposals[level] += 1
        alpha = mlda_level_accept(
            self._loglike(cand, level),
            self._loglike(cur, level),
            self._loglike(cur, level - 1),
            self._loglike(cand, level - 1),
        )
        self._alphas[level].append(alpha)
        if accept(alpha, self.rng):
            self.accepts[level] += 1
            return cand
        return cur

    def _step(self, level: int, cur: _Point) -> _Point:
        return self._mh_step(cur) if level == 0 else self._da_step(level, cur)

    def _subchain(self, level: int, start: _Point) -> _Point:
        cur = start
        for _ in range(self.stack.levels[level].subchain_length):
            cur = self._step(level, cur)
        return cur

    def sample(self, n: int) -> "MultilevelSampler":
        if n < 0:
            raise ValueError("number of samples must be non-negative")
        t0 = time.perf_counter()
        for _ in range(n):
            self._fine_index += 1
            before = self.accepts[self._top]
            self.current = self._step(self._top, self.current)
            self._samples.append(self.current.theta)
            self._loglik.append(self.current.loglik[self._top])
            self._accepted.append(bool(self.accepts[self._top] > before))
        self._wall += time.perf_counter() - t0
        return self

    @property
    def n_samples(self) -> int:
        return len(self._samples)

    def samples(self, start: int = 0) -> np.ndarray:
        """Fine-level samples from index ``start`` as an ``(n, dim)`` array."""
        return np.array(self._samples[start:]).reshape(-1, self.stack.prior.dim)

    def chain(self) -> Chain:
        dim = self.stack.prior.dim
        samples = np.array(self._samples).reshape(-1, dim)
        return Chain(
            samples=samples,
            log_likelihoods=np.array(self._loglik, dtype=float),
            accepted=np.array(self._accepted, dtype=bool),
            per_level_accept_counts=self.accepts.copy(),
            per_level_proposal_counts=self.proposals.copy(),
            wall_time=self._wall,
            level_labels=[lvl.label for lvl in self.stack.levels],
            evaluations=self.evaluations.copy(),
            requests=self.requests.copy(),
            alphas=[np.array(a) for a in self._alphas],
        )


def run_mh(stack: FidelityStack, theta0, n: int, rng: np.random.Generator) -> Chain:
    """Random-walk Metropolis-Hastings on the single level of ``stack``."""
    if stack.n_levels != 1:
        raise ValueError("run_mh expects a single-level stack")
    if n < 1:
        raise ValueError("n must be >= 1")
    return MultilevelSampler(stack, theta0, rng).sample(n).chain()


def run_mlda(stack: FidelityStack, theta0, n_fine: int, rng: np.random.Generator) -> Chain:
    if stack.n_levels < 2:
        raise ValueError("MLDA needs at least two levels")
    if n_fine < 1:
        raise ValueError("n_fine must be >= 1")
    return MultilevelSampler(stack, theta0, rng).sample(n_fine).chain()


def _check_mfda_stack(stack: FidelityStack, cache: EvalCache) -> None:
    from .surrogate import MFLevelLikelihood

    if stack.n_levels < 2:
        raise ValueError("MFDA needs at least two levels")
    for lvl in stack.levels:
        fn = lvl.log_likelihood_fn
        if not isinstance(fn, MFLevelLikelihood):
            raise TypeError(f"level {lvl.label!r} is not backed by a multi-fidelity surrogate")
        if fn.cache is not cache:
            raise ValueError(f"level {lvl.label!r} does not share the chain's evaluation cache")


def run_mfda(
    stack: FidelityStack, cache: EvalCache, theta0, n_fine: int, rng: np.random.Generator
) -> Chain:
    """Multi-fidelity delayed acceptance: MLDA control flow on surrogate likelihoods.

    Every level must be an :class:`~mfda.surrogate.MFLevelLikelihood` sharing
    ``cache``; no high-fidelity model is reachable from the stack.
    """
    _check_mfda_stack(stack, cache)
    if n_fine < 1:
        raise ValueError("n_fine must be >= 1")
    chain = MultilevelSampler(stack, theta0, rng).sample(n_fine).chain()
    chain.meta["cache"] = cache.stats()
    return chain


# -- Gauss-Newton initialization ------------------------------------------------


class LeastSquaresInit(NamedTuple):
    theta0: np.ndarray
    proposal: Proposal
    converged: bool
    iterations: int


def _fd_jacobian(model, theta, f0=None):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        h = 1e-5 * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        cols.append((np.asarray(model(tp), float).ravel() - np.asarray(model(tm), float).ravel()) / (2 * h))
    return np.column_stack(cols)


def init_from_least_squares(
    model: Callable,
    y_obs,
    noise: NoiseModel,
    x0,
    prior_precision=None,
    prior_mean=None,
    max_iter: int = 50,
    tol: float = 1e-8,
) -> LeastSquaresInit:
    """Gauss-Newton fit of ``model`` to ``y_obs`` and the matching proposal.

    Minimizes ``||(f(x) - y) / sigma||^2`` (plus ``(x - m)^T P (x - m)`` when a
    Gaussian prior precision ``P`` is supplied) from ``x0``; Jacobians by
    central differences. The proposal covariance is the inverse Gauss-Newton
    Hessian at the minimizer scaled by ``2.38**2 / dim``.
    """
    y_obs = np.asarray(y_obs, dtype=float).ravel()
    x = np.array(x0, dtype=float)
    dim = x.size
    s2 = noise.sigma**2
    P = None if prior_precision is None else np.atleast_2d(np.asarray(prior_precision, float))
    m = np.zeros(dim) if prior_mean is None else np.asarray(prior_mean, float)

    def objective(x, fx):
        r = fx - y_obs
        val = (r @ r) / s2
        if P is not None:
            d = x - m
            val += d @ P @ d
        return val

    def hessian(J):
        H = J.T @ J / s2
        if P is not None:
            H = H + P
        return H

    fx = np.asarray(model(x), float).ravel()
    best_x, best_f = x.copy(), objective(x, fx)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _fd_jacobian(model, x)
        H = hessian(J)
        g = J.T @ (fx - y_obs) / s2
        if P is not None:
            g = g + P @ (x - m)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.solve(H + 1e-8 * np.eye(dim), g)
        # backtrack until the objective does not increase
        t = 1.0
        for _ in range(30):
            x_new = x + t * step
            f_new_vec = np.asarray(model(x_new), float).ravel()
            f_new = objective(x_new, f_new_vec)
            if f_new <= best_f * (1 + 1e-12) + 1e-300:
                break
            t *= 0.5
        else:
            break
        x, fx = x_new, f_new_vec
        f_prev = best_f
        if f_new <= best_f:
            best_x, best_f = x.copy(), f_new
        small_step = np.linalg.norm(t * step) <= tol * (1.0 + np.linalg.norm(x))
        # a solver noise floor can keep the step above tol after the objective has settled
        stalled = abs(f_prev - f_new) <= 1e-12 * (1.0 + abs(f_new))
        if small_step or stalled:
            converged = True
            break
    if not converged:
        warnings.warn(f"Gauss-Newton did not converge in {max_iter} iterations", RuntimeWarning)
        logger.warning("Gauss-Newton did not converge; returning best iterate")

    J = _fd_jacobian(model, best_x)
    H = hessian(J)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.linalg.inv(H + 1e-8 * np.eye(dim))
    cov = 0.5 * (cov + cov.T) * (GN_SCALE / dim)
    return LeastSquaresInit(best_x, Proposal(cov), converged, it)


def gaussian_log_likelihood_fn(model: Callable, y_obs, noise: NoiseModel) -> Callable:
    """Wrap a forward model into ``theta -> log L(theta)``."""
    y_obs = np.asarray(y_obs, dtype=float).ravel()

    def fn(theta):
        return log_likelihood(model(theta), y_obs, noise)

    return fn
