"""Chain diagnostics: autocorrelation, effective sample size, Gelman-Rubin.

All functions take post-burn-in samples. ESS sums autocorrelations with
Geyer's initial positive sequence truncation; R-hat is the classic potential
scale reduction factor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "autocorrelation",
    "integrated_autocorr_time",
    "ess",
    "gelman_rubin",
    "DiagnosticsReport",
    "summarize",
    "DegenerateChainError",
]


class DegenerateChainError(ValueError):
    """Raised for zero-variance input where the statistic is undefined."""


def autocorrelation(series, max_lag: int | None = None) -> np.ndarray:
    """Biased sample autocorrelation ``rho_0 .. rho_max_lag`` via FFT."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("autocorrelation needs at least two samples")
    x = x - x.mean()
    var = x @ x / n
    if not var > 0:
        raise DegenerateChainError("series has zero variance")
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n
    return acov / var


def integrated_autocorr_time(series) -> float:
    """``tau = -1 + 2 sum_k Gamma_k`` over Geyer's initial positive pairs.

    ``Gamma_k = rho_{2k} + rho_{2k+1}``; summation stops at the first
    non-positive pair. This equals ``1 + 2 sum_{t>=1} rho_t`` over the
    retained lags.
    """
    rho = autocorrelation(series)
    n_pairs = rho.size // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    nonpos = np.flatnonzero(pairs <= 0)
    stop = nonpos[0] if nonpos.size else n_pairs
    tau = -1.0 + 2.0 * pairs[:stop].sum()
    return float(tau)


def ess(series) -> float:
    """``N / tau`` clamped to ``(0, N]``."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    tau = integrated_autocorr_time(x)
    if not tau > 0:
        return float(n)
    return float(min(n / tau, n))


def gelman_rubin(chains: Sequence) -> float:
    """Potential scale reduction ``sqrt(((N-1)/N W + B/N) / W)`` for one component."""
    arr = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len(arr) < 2:
        raise ValueError("R-hat needs at least two chains")
    n = arr[0].size
    if any(a.size != n for a in arr):
        raise ValueError("chains must have equal length")
    if n < 10:
        raise ValueError("chains must have at least 10 samples")
    X = np.vstack(arr)
    means = X.mean(axis=1)
    W = X.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if not W > 0:
        raise DegenerateChainError("within-chain variance is zero; R-hat is undefined")
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))


@dataclass
class DiagnosticsReport:
    ess_per_component: list[float]
    rhat_per_component: list[float] | None
    acceptance_rates_per_level: list[float]
    time_per_ess: float
    wall_time: float
    n_samples: int
    n_chains: int
    posterior_mean: list[float]
    rmse_vs_truth: float | None = None
    rhat_available: bool = True
    flags: list[str] = field(default_factory=list)

    @property
    def min_ess(self) -> float:
        return float(min(self.ess_per_component))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["min_ess"] = self.min_ess
        return d


def summarize(
    chains,
    wall_time: float,
    theta_true=None,
    acceptance_rates: Sequence[float] | None = None,
) -> DiagnosticsReport:
    """Report over one or more post-burn-in chains of shape ``(N, dim)``.

    ESS is summed over chains per component; ``time_per_ess`` divides
    ``wall_time`` by the smallest component ESS.
    """
    if isinstance(chains, np.ndarray) and chains.ndim <= 2:
        chains = [chains]
    samples = [np.asarray(c, float) for c in chains]
    samples = [s.reshape(-1, 1) if s.ndim == 1 else s for s in samples]
    dim = samples[0].shape[1]
    if any(s.shape[1] != dim for s in samples):
        raise ValueError("chains disagree on the parameter dimension")
    flags = []
    ess_comp = []
    for k in range(dim):
        total = 0.0
        for s in samples:
            try:
                total += ess(s[:, k])
            except DegenerateChainError:
                flags.append(f"component {k}: zero variance in a chain")
        ess_comp.append(total)
    rhat = None
    if len(samples) >= 2:
        n = min(s.shape[0] for s in samples)
        try:
            rhat = [gelman_rubin([s[-n:, k] for s in samples]) for k in range(dim)]
        except (DegenerateChainError, ValueError) as exc:
            flags.append(f"R-hat unavailable: {exc}")
    else:
        flags.append("R-hat needs at least two chains")
    pooled = np.vstack(samples)
    mean = pooled.mean(axis=0)
    rmse = None
    if theta_true is not None:
        rmse = float(np.sqrt(np.mean((mean - np.asarray(theta_true, float)) ** 2)))
    min_ess = min(ess_comp) if ess_comp else 0.0
    return DiagnosticsReport(
        ess_per_component=[float(e) for e in ess_comp],
        rhat_per_component=rhat,
        acceptance_rates_per_level=[float(a) for a in (acceptance_rates or [])],
        time_per_ess=float(wall_time / min_ess) if min_ess > 0 else float("inf"),
        wall_time=float(wall_time),
        n_samples=int(pooled.shape[0]),
        n_chains=len(samples),
        posterior_mean=mean.tolist(),
        rmse_vs_truth=rmse,
        rhat_available=rhat is not None,
        flags=flags,
    )
