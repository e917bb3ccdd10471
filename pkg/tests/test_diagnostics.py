import numpy as np
import pytest

from mfda.diagnostics import (
    DegenerateChainError,
    autocorrelation,
    ess,
    gelman_rubin,
    integrated_autocorr_time,
    summarize,
)


def ar1(n, rho, rng):
    x = np.empty(n)
    x[0] = rng.standard_normal() / np.sqrt(1 - rho**2)
    e = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


def test_autocorrelation_matches_direct_sum():
    x = np.random.default_rng(0).standard_normal(200)
    rho = autocorrelation(x, 5)
    xc = x - x.mean()
    direct = [xc[: 200 - k] @ xc[k:] / (xc @ xc) for k in range(6)]
    np.testing.assert_allclose(rho, direct, atol=1e-12)


def test_constant_chain_is_degenerate():
    with pytest.raises(DegenerateChainError):
        ess(np.ones(50))
    with pytest.raises(DegenerateChainError):
        gelman_rubin([np.ones(20), np.ones(20)])


def test_iid_ess_close_to_n():
    x = np.random.default_rng(1).standard_normal(20000)
    assert ess(x) == pytest.approx(20000, rel=0.1)
    assert ess(x) <= 20000


def test_ar1_autocorr_time():
    x = ar1(50000, 0.5, np.random.default_rng(2))
    assert integrated_autocorr_time(x) == pytest.approx(3.0, rel=0.1)


def test_rhat_argument_checks():
    with pytest.raises(ValueError):
        gelman_rubin([np.zeros(20)])
    with pytest.raises(ValueError):
        gelman_rubin([np.arange(20.0), np.arange(19.0)])
    with pytest.raises(ValueError):
        gelman_rubin([np.arange(5.0), np.arange(5.0)])


def test_summarize_multi_chain():
    rng = np.random.default_rng(3)
    chains = [rng.standard_normal((2000, 2)) for _ in range(3)]
    rep = summarize(chains, wall_time=6.0, theta_true=[0.0, 0.0], acceptance_rates=[0.3])
    assert rep.n_chains == 3 and rep.n_samples == 6000
    assert rep.min_ess == pytest.approx(6000, rel=0.15)
    assert rep.time_per_ess == pytest.approx(6.0 / rep.min_ess)
    assert rep.rmse_vs_truth < 0.05
    assert max(rep.rhat_per_component) < 1.01
    assert rep.to_dict()["min_ess"] == rep.min_ess


def test_summarize_single_chain_flags_rhat():
    rep = summarize(np.random.default_rng(0).standard_normal(500), wall_time=1.0)
    assert rep.rhat_per_component is None and not rep.rhat_available
    assert rep.flags
