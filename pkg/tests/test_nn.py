import numpy as np
import pytest
from scipy.special import erf

from mfda.nn import (
    ACTIVATIONS,
    Network,
    NetworkSpec,
    Normalizer,
    TrainConfig,
    TrainingDataset,
    TrainingDiverged,
    adam_init,
    adam_step,
    forward,
    init_weights,
    load_network,
    mse_and_grad,
    save_network,
    train,
)


def small_spec():
    return NetworkSpec.build([(3, [(6, "gelu"), (5, "linear")]), (2, [(5, "tanh")])], [(4, "gelu"), (2, "linear")])


def test_gelu_is_exact_erf_form():
    x = np.linspace(-4, 4, 41)
    f, df = ACTIVATIONS["gelu"]
    np.testing.assert_allclose(f(x), 0.5 * x * (1 + erf(x / np.sqrt(2))), rtol=1e-14, atol=1e-15)
    h = 1e-6
    np.testing.assert_allclose(df(x), (f(x + h) - f(x - h)) / (2 * h), atol=1e-8)


def test_spec_shapes_and_roundtrip():
    spec = small_spec()
    assert spec.input_dims == [3, 2]
    assert spec.output_dim == 2
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_forward_single_and_batch_agree():
    spec = small_spec()
    w = init_weights(spec, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    batch = forward(spec, w, [a, b])
    assert batch.shape == (7, 2)
    np.testing.assert_allclose(forward(spec, w, [a[3], b[3]]), batch[3], rtol=1e-14)


def test_forward_rejects_wrong_branch_count():
    spec = small_spec()
    w = init_weights(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(spec, w, [np.zeros(3)])


def test_gradient_matches_finite_differences():
    spec = small_spec()
    rng = np.random.default_rng(2)
    w = init_weights(spec, rng)
    xs = [rng.standard_normal((5, 3)), rng.standard_normal((5, 2))]
    y = rng.standard_normal((5, 2))
    _, g = mse_and_grad(spec, w, xs, y)
    for arr, garr in zip(w.arrays(), g.arrays()):
        for idx in [(0,) * arr.ndim, tuple(s - 1 for s in arr.shape)]:
            old = arr[idx]
            arr[idx] = old + 1e-6
            lp, _ = mse_and_grad(spec, w, xs, y)
            arr[idx] = old - 1e-6
            lm, _ = mse_and_grad(spec, w, xs, y)
            arr[idx] = old
            assert garr[idx] == pytest.approx((lp - lm) / 2e-6, rel=1e-5, abs=1e-9)


def test_adam_first_step_moves_by_lr():
    spec = small_spec()
    w = init_weights(spec, np.random.default_rng(0))
    g = w.copy()
    for a in g.arrays():
        a[...] = 3.0
    before = [a.copy() for a in w.arrays()]
    st = adam_init(w, lr=0.01)
    adam_step(st, w, g)
    for a, b in zip(w.arrays(), before):
        np.testing.assert_allclose(b - a, 0.01, rtol=1e-6)


def test_normalizer_roundtrip():
    rng = np.random.default_rng(0)
    xs = [rng.normal(3, 2, (50, 3))]
    y = rng.normal(-1, 5, (50, 2))
    n = Normalizer.fit(xs, y)
    np.testing.assert_allclose(n.outputs(n.targets(y)), y, rtol=1e-13)
    np.testing.assert_allclose(n.inputs(xs)[0].mean(axis=0), 0, atol=1e-12)


def test_training_fits_smooth_map_and_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (400, 2))
    y = np.column_stack([np.sin(2 * x[:, 0]) + x[:, 1] ** 2])
    spec = NetworkSpec.build([(2, [(32, "gelu"), (32, "gelu")])], [(1, "linear")])
    cfg = TrainConfig(epochs=150, batch_size=32, lr=3e-3, seed=7)
    net, hist = train(spec, TrainingDataset([x], y), cfg)
    assert hist.val_loss[-1] < 0.05 * np.var(y)
    net2, _ = train(spec, TrainingDataset([x], y), cfg)
    np.testing.assert_array_equal(net([x[:5]]), net2([x[:5]]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_is_reported():
    x = np.ones((20, 1))
    y = np.ones((20, 1))
    spec = NetworkSpec.build([(1, [(4, "linear")])], [(1, "linear")])
    with pytest.raises(TrainingDiverged):
        train(spec, TrainingDataset([x], y * 1e200), TrainConfig(epochs=3, lr=1e200, normalize=False))


def test_dataset_rejects_inconsistent_counts():
    with pytest.raises(ValueError):
        TrainingDataset([np.zeros((5, 2))], np.zeros((4, 1)))


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    spec = small_spec()
    net = Network(spec, init_weights(spec, rng), Normalizer.fit([rng.standard_normal((9, 3)), rng.standard_normal((9, 2))],
                                                                  rng.standard_normal((9, 2))), {"level": 1})
    save_network(net, tmp_path / "w.json")
    back = load_network(tmp_path / "w.json")
    xs = [rng.standard_normal((4, 3)), rng.standard_normal((4, 2))]
    np.testing.assert_array_equal(net(xs), back(xs))
    assert back.metadata["level"] == 1
