import numpy as np
import pytest

from mfda.rd import (
    RDInstability,
    RDLevel,
    RDParams,
    RDProblem,
    RDSeries,
    SensorGridRD,
    SpectralGrid,
    initial_condition,
    integrate_rd,
    interpolate_to_hf,
    load_snapshots,
    observe_rd,
    resample_time,
    save_snapshots,
    spatial_interp_matrix,
)


def rotation(u0, v0, mu1, t):
    c, s = np.cos(mu1 * t), np.sin(mu1 * t)
    return u0 * c + v0 * s, v0 * c - u0 * s


def test_grid_validation():
    with pytest.raises(ValueError):
        SpectralGrid(24)
    g = SpectralGrid(16)
    assert g.x[0] == -20.0 and g.dx == 2.5
    assert g.k2.shape == (16, 9)


def test_params_box():
    with pytest.raises(ValueError):
        RDParams(2.0, 0.05)
    with pytest.raises(ValueError):
        RDParams.from_vector([1.0, 0.05, 3.0])


def test_spectral_roundtrip():
    g = SpectralGrid(32)
    f = np.random.default_rng(0).standard_normal((32, 32))
    np.testing.assert_allclose(g.to_physical(g.to_spectral(f)), f, atol=1e-14)


def test_initial_condition_forms():
    g = SpectralGrid(32)
    u, v = initial_condition(g, "literal")
    np.testing.assert_array_equal(u, v)
    u, v = initial_condition(g, "amplitude-phase")
    X, Y = g.mesh()
    np.testing.assert_allclose(np.hypot(u, v), np.tanh(np.hypot(X, Y)), atol=1e-14)
    with pytest.raises(ValueError):
        initial_condition(g, "spiral")


def test_zero_state_is_fixed_point():
    g = SpectralGrid(16)
    z = np.zeros((16, 16))
    s = integrate_rd(g, RDParams(1.0, 0.05), t_end=5.0, n_output_steps=10, u0=z, v0=z)
    assert np.all(s.data == 0.0)


def test_uniform_limit_cycle_rotates():
    g = SpectralGrid(16)
    u0 = np.full((16, 16), np.cos(0.3))
    v0 = np.full((16, 16), np.sin(0.3))
    s = integrate_rd(g, RDParams(1.2, 0.05), t_end=10.0, n_output_steps=50, u0=u0, v0=v0)
    ue, ve = rotation(np.cos(0.3), np.sin(0.3), 1.2, s.times)
    np.testing.assert_allclose(s.u[:, 3, 5], ue, atol=1e-3)
    np.testing.assert_allclose(s.v[:, 3, 5], ve, atol=1e-3)


def test_rk4_temporal_order():
    # off-cycle uniform data exercises the nonlinearity; halving dt cuts the error ~16x
    g = SpectralGrid(4)
    u0 = np.full((4, 4), 0.3)
    v0 = np.zeros((4, 4))
    p = RDParams(1.0, 0.05)
    ref = integrate_rd(g, p, 2.0, 1, substeps=512, u0=u0, v0=v0).data[-1, 0, 0, 0]
    errs = [abs(integrate_rd(g, p, 2.0, 1, substeps=m, u0=u0, v0=v0).data[-1, 0, 0, 0] - ref) for m in (10, 20)]
    assert 12 < errs[0] / errs[1] < 20


def test_single_mode_small_amplitude_follows_linearization():
    g = SpectralGrid(32)
    X, _ = g.mesh()
    k = 2 * np.pi / 40.0 * 3
    eps = 1e-6
    u0 = eps * np.cos(k * X)
    s = integrate_rd(g, RDParams(1.0, 0.1), t_end=1.0, n_output_steps=4, substeps=8, u0=u0, v0=np.zeros_like(u0))
    # linearization about zero: u_t = u + mu2 lap u; diffusion is exact, the growth is RK4
    expected = u0 * np.exp((1 - 0.1 * k**2) * 1.0)
    np.testing.assert_allclose(s.u[-1], expected, rtol=1e-8, atol=1e-16)


def test_instability_raises():
    with pytest.raises(RDInstability):
        integrate_rd(SpectralGrid(16), RDParams(1.5, 0.01), t_end=50.0, n_output_steps=5, ic="amplitude-phase")


def test_sensor_lattice():
    sens = SensorGridRD()
    assert sens.n_sensors == 338
    g = SpectralGrid(64)
    idx = sens.indices(g)
    assert idx.shape == (13,) and len(set(idx)) == 13
    np.testing.assert_allclose(g.x[idx], sens.locations_1d, atol=g.dx / 2 + 1e-12)


def test_observe_rd_layout():
    g = SpectralGrid(16)
    data = np.random.default_rng(0).standard_normal((4, 2, 16, 16))
    s = RDSeries(g, np.arange(4.0), data)
    obs = observe_rd(s)
    sens = SensorGridRD()
    flat = sens.flat_indices(g)
    assert obs.shape == (338, 3)
    np.testing.assert_array_equal(obs[5], data[1:, 0].reshape(3, -1)[:, flat[5]])
    np.testing.assert_array_equal(obs[169 + 5], data[1:, 1].reshape(3, -1)[:, flat[5]])


def test_interpolation_exact_on_shared_nodes_and_constants():
    g1, g2 = SpectralGrid(16), SpectralGrid(64)
    data = np.random.default_rng(1).standard_normal((3, 2, 16, 16))
    s = RDSeries(g1, np.array([0.0, 1.0, 2.0]), data)
    up = interpolate_to_hf(s, g2, s.times)
    np.testing.assert_allclose(up.data[:, :, ::4, ::4], data, atol=1e-14)
    M = spatial_interp_matrix(g1, g2)
    np.testing.assert_allclose(M @ np.ones(256), 1.0)
    np.testing.assert_allclose((M @ data[1, 0].ravel()).reshape(64, 64), up.data[1, 0], atol=1e-13)
    with pytest.raises(ValueError):
        interpolate_to_hf(up, g1, s.times)


def test_resample_time_spline_reproduces_linear():
    t0 = np.linspace(0, 50, 51)
    t1 = np.linspace(0, 50, 251)
    vals = np.vstack([2 * t0 + 1, -t0])
    np.testing.assert_allclose(resample_time(vals, t0, t1), np.vstack([2 * t1 + 1, -t1]), atol=1e-10)
    assert resample_time(vals, t0, t0) is vals


def test_snapshot_roundtrip(tmp_path):
    g = SpectralGrid(8)
    s = RDSeries(g, np.linspace(0, 1, 3), np.random.default_rng(0).standard_normal((3, 2, 8, 8)), {"k": 1})
    save_snapshots(tmp_path / "s.bin", s, RDParams(1.0, 0.05))
    back = load_snapshots(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.data, s.data)
    assert back.grid == g and back.meta == {"k": 1}


def test_problem_operators_match_explicit_interpolation():
    prob = RDProblem([(16, 10, 2), (32, 20, 1)], t_end=4.0)
    lf = prob.lf_levels[0].solve([1.0, 0.05])
    explicit = observe_rd(prob.to_hf(lf))
    np.testing.assert_allclose(prob.sensor_output(lf), explicit, atol=1e-12)
    Phi = np.linalg.qr(np.random.default_rng(0).standard_normal((2 * 32 * 32, 3)))[0]
    z = prob.reduced_output(lf, Phi)
    np.testing.assert_allclose(z, Phi.T @ prob.to_hf(lf).snapshots(1), atol=1e-12)
    assert prob.n_obs == 338 * 20
    assert prob.observe_level(2, [1.0, 0.05]).shape == (338, 20)


def test_level_counts_calls():
    lvl = RDLevel(16, 5, 1, t_end=1.0)
    lvl([1.0, 0.05])
    lvl.solve([1.0, 0.05])
    assert lvl.calls == 2
