import numpy as np
import pytest

from mfda.pod import build_pod, energy_rank, lift, load_basis, project, reduce_lf, save_basis
from mfda.rd import RDSeries, SpectralGrid


def low_rank_snapshots(n=400, m=30, rank=6, seed=0):
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.standard_normal((n, rank)))[0]
    s = 10.0 ** -np.arange(rank)
    return (U * s) @ rng.standard_normal((rank, m)), s


def test_energy_rank_values():
    s = np.sqrt(np.array([50.0, 30.0, 15.0, 5.0]))
    assert energy_rank(s, 0.5) == 1
    assert energy_rank(s, 0.8) == 2
    assert energy_rank(s, 0.95) == 3
    assert energy_rank(s, 1.0) == 4
    with pytest.raises(ValueError):
        energy_rank(s, 0.0)


@pytest.mark.parametrize("method", ["svd", "gram"])
def test_basis_orthonormal_and_energy(method):
    S, _ = low_rank_snapshots()
    b = build_pod(S, 0.9999, method=method)
    np.testing.assert_allclose(b.Phi.T @ b.Phi, np.eye(b.r), atol=1e-12)
    assert b.energy >= 0.9999
    assert b.meta["method"] == method


def test_methods_span_same_subspace():
    S, _ = low_rank_snapshots(seed=3)
    a = build_pod(S, 0.999, method="svd")
    b = build_pod(S, 0.999, method="gram")
    assert a.r == b.r
    np.testing.assert_allclose(a.Phi @ a.Phi.T, b.Phi @ b.Phi.T, atol=1e-8)


def test_reconstruction_error_matches_discarded_energy():
    S = np.random.default_rng(1).standard_normal((120, 40))
    b = build_pod(S, 0.8, method="svd")
    resid = S - b.Phi @ (b.Phi.T @ S)
    np.testing.assert_allclose(np.sum(resid**2), np.sum(b.singular_values[b.r:] ** 2), rtol=1e-10)


def test_project_lift_with_mean():
    S, _ = low_rank_snapshots()
    S = S + 5.0
    b = build_pod(S, 1.0, subtract_mean=True)
    np.testing.assert_allclose(lift(b, project(b, S)), S, atol=1e-10)
    with pytest.raises(ValueError):
        project(b, np.zeros(3))


def test_invalid_input():
    with pytest.raises(ValueError):
        build_pod(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        build_pod(np.ones((4, 2)), method="qr")


def test_reduce_lf_skips_initial_state():
    g = SpectralGrid(4)
    data = np.random.default_rng(0).standard_normal((5, 2, 4, 4))
    series = RDSeries(g, np.arange(5.0), data)
    b = build_pod(series.snapshots(0), 0.99)
    z = reduce_lf(series, b)
    assert z.shape == (b.r, 4)
    np.testing.assert_allclose(z, b.Phi.T @ data[1:].reshape(4, -1).T)


def test_save_load_roundtrip(tmp_path):
    S, _ = low_rank_snapshots()
    b = build_pod(S, 0.99, subtract_mean=True)
    save_basis(b, tmp_path / "pod.bin")
    c = load_basis(tmp_path / "pod.bin")
    np.testing.assert_array_equal(c.Phi, b.Phi)
    np.testing.assert_array_equal(c.mean, b.mean)
    assert c.r == b.r and c.provenance == b.provenance


def test_min_rank_raises_energy_rank():
    S = np.random.default_rng(2).standard_normal((60, 20))
    a = build_pod(S, 0.5)
    b = build_pod(S, 0.5, min_rank=a.r + 4)
    assert b.r == a.r + 4 and b.energy > a.energy
    np.testing.assert_allclose(b.Phi[:, : a.r].T @ a.Phi, np.eye(a.r), atol=1e-8)
