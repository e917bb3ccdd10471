"""Branch-fusion feedforward networks in plain numpy.

Each input source has its own branch of dense layers. The branch outputs are
concatenated and passed through a shared output block that ends in a linear
layer. Layers compute ``z = act(W z_prev + b)``; batches are processed
row-wise, so ``z`` has shape ``(batch, width)`` and ``W`` has shape
``(width, width_prev)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

logger = logging.getLogger(__name__)

__all__ = [
    "LayerSpec",
    "BranchSpec",
    "NetworkSpec",
    "NetworkWeights",
    "AdamState",
    "Normalizer",
    "Network",
    "TrainConfig",
    "TrainingDataset",
    "TrainingHistory",
    "TrainingDiverged",
    "init_weights",
    "forward",
    "mse_and_grad",
    "adam_init",
    "adam_step",
    "train",
    "save_network",
    "load_network",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
}


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "linear"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class BranchSpec:
    input_dim: int
    layers: tuple[LayerSpec, ...] = ()

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width if self.layers else self.input_dim


@dataclass(frozen=True)
class NetworkSpec:
    branches: tuple[BranchSpec, ...]
    output_block: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.branches:
            raise ValueError("a network needs at least one branch")
        if not self.output_block or self.output_block[-1].activation != "linear":
            raise ValueError("the output block must end in a linear layer")

    @property
    def fusion_width(self) -> int:
        return sum(b.output_dim for b in self.branches)

    @property
    def output_dim(self) -> int:
        return self.output_block[-1].width

    @property
    def input_dims(self) -> list[int]:
        return [b.input_dim for b in self.branches]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(out, in)`` for every dense layer: branches in order, then the output block."""
        shapes = []
        for b in self.branches:
            prev = b.input_dim
            for layer in b.layers:
                shapes.append((layer.width, prev))
                prev = layer.width
        prev = self.fusion_width
        for layer in self.output_block:
            shapes.append((layer.width, prev))
            prev = layer.width
        return shapes

    def to_dict(self) -> dict:
        return {
            "branches": [
                {"input_dim": b.input_dim, "layers": [asdict(l) for l in b.layers]}
                for b in self.branches
            ],
            "output_block": [asdict(l) for l in self.output_block],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            branches=tuple(
                BranchSpec(b["input_dim"], tuple(LayerSpec(**l) for l in b["layers"]))
                for b in d["branches"]
            ),
            output_block=tuple(LayerSpec(**l) for l in d["output_block"]),
        )

    @classmethod
    def build(cls, branches: Sequence[tuple[int, Sequence[tuple[int, str]]]],
              output_block: Sequence[tuple[int, str]]) -> "NetworkSpec":
        """Shorthand: ``build([(64, [(128, "gelu"), ...]), ...], [(25, "linear")])``."""
        return cls(
            branches=tuple(
                BranchSpec(dim, tuple(LayerSpec(w, a) for w, a in layers)) for dim, layers in branches
            ),
            output_block=tuple(LayerSpec(w, a) for w, a in output_block),
        )


@dataclass
class NetworkWeights:
    """Dense layer parameters in the order of :meth:`NetworkSpec.layer_shapes`."""

    W: list[np.ndarray]
    b: list[np.ndarray]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([w.copy() for w in self.W], [b.copy() for b in self.b])

    def zeros_like(self) -> "NetworkWeights":
        return NetworkWeights([np.zeros_like(w) for w in self.W], [np.zeros_like(b) for b in self.b])

    def arrays(self) -> list[np.ndarray]:
        return [*self.W, *self.b]

    def check(self, spec: NetworkSpec) -> None:
        shapes = spec.layer_shapes()
        if len(self.W) != len(shapes) or len(self.b) != len(shapes):
            raise ValueError("weights do not match the network layer count")
        for W, b, (o, i) in zip(self.W, self.b, shapes):
            if W.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"layer shape mismatch: W {W.shape}, b {b.shape}, expected ({o}, {i})")


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> NetworkWeights:
    """Glorot-uniform weights, zero biases."""
    Ws, bs = [], []
    for out, inp in spec.layer_shapes():
        limit = math.sqrt(6.0 / (inp + out))
        Ws.append(rng.uniform(-limit, limit, size=(out, inp)))
        bs.append(np.zeros(out))
    return NetworkWeights(Ws, bs)


def _as_batch(branch_inputs, spec: NetworkSpec) -> tuple[list[np.ndarray], bool]:
    if len(branch_inputs) != len(spec.branches):
        raise ValueError(f"expected {len(spec.branches)} branch inputs, got {len(branch_inputs)}")
    xs = [np.asarray(x, dtype=float) for x in branch_inputs]
    single = xs[0].ndim == 1
    xs = [x[None, :] if x.ndim == 1 else x for x in xs]
    n = xs[0].shape[0]
    for x, b in zip(xs, spec.branches):
        if x.ndim != 2 or x.shape[1] != b.input_dim or x.shape[0] != n:
            raise ValueError(f"branch input of shape {x.shape} does not match input_dim {b.input_dim}")
    return xs, single


def _forward_cache(spec: NetworkSpec, w: NetworkWeights, xs: list[np.ndarray]):
    """Forward pass keeping pre-activations for backprop."""
    k = 0
    tape = []  # (layer index, input, pre-activation, activation name)
    outs = []
    for b, x in zip(spec.branches, xs):
        z = x
        for layer in b.layers:
            a = z @ w.W[k].T + w.b[k]
            tape.append((k, z, a, layer.activation))
            z = ACTIVATIONS[layer.activation][0](a)
            k += 1
        outs.append(z)
    z = np.concatenate(outs, axis=1) if len(outs) > 1 else outs[0]
    for layer in spec.output_block:
        a = z @ w.W[k].T + w.b[k]
        tape.append((k, z, a, layer.activation))
        z = ACTIVATIONS[layer.activation][0](a)
        k += 1
    return z, tape


def forward(spec: NetworkSpec, w: NetworkWeights, branch_inputs) -> np.ndarray:
    """Network output for one sample (1-D inputs) or a batch (2-D inputs)."""
    xs, single = _as_batch(branch_inputs, spec)
    y, _ = _forward_cache(spec, w, xs)
    return y[0] if single else y


def mse_and_grad(spec: NetworkSpec, w: NetworkWeights, branch_inputs, targets):
    """Batch-mean squared-norm error and its gradient with respect to all weights."""
    xs, _ = _as_batch(branch_inputs, spec)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = xs[0].shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if targets.shape != (n, spec.output_dim):
        raise ValueError(f"targets of shape {targets.shape}, expected {(n, spec.output_dim)}")
    y, tape = _forward_cache(spec, w, xs)
    resid = y - targets
    loss = float(np.sum(resid * resid) / n)

    grads = w.zeros_like()
    delta = 2.0 * resid / n  # dL/dy
    n_out = len(spec.output_block)
    # output block, last layer first
    for k, z_in, a, act in reversed(tape[len(tape) - n_out:]):
        delta = delta * ACTIVATIONS[act][1](a)
        grads.W[k] = delta.T @ z_in
        grads.b[k] = delta.sum(axis=0)
        delta = delta @ w.W[k]
    # split the fusion gradient back onto the branches
    offsets = np.cumsum([0] + [b.output_dim for b in spec.branches])
    branch_tape = tape[: len(tape) - n_out]
    pos = len(branch_tape)
    for bi in reversed(range(len(spec.branches))):
        d = delta[:, offsets[bi]:offsets[bi + 1]]
        nl = len(spec.branches[bi].layers)
        for k, z_in, a, act in reversed(branch_tape[pos - nl:pos]):
            d = d * ACTIVATIONS[act][1](a)
            grads.W[k] = d.T @ z_in
            grads.b[k] = d.sum(axis=0)
            d = d @ w.W[k]
        pos -= nl
    return loss, grads


@dataclass
class AdamState:
    m: NetworkWeights
    v: NetworkWeights
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(w: NetworkWeights, lr: float = 1e-3) -> AdamState:
    return AdamState(m=w.zeros_like(), v=w.zeros_like(), t=0, lr=lr)


def adam_step(state: AdamState, w: NetworkWeights, grads: NetworkWeights):
    """One bias-corrected Adam update; arrays are updated in place and returned."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(w.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, w


@dataclass
class Normalizer:
    """Per-feature input standardization and an affine output map.

    Outputs use a per-component mean and one global scale so that squared
    error in normalized units is a constant multiple of the raw error.
    """

    in_mean: list[np.ndarray]
    in_std: list[np.ndarray]
    out_mean: np.ndarray
    out_scale: float = 1.0

    @classmethod
    def identity(cls, spec: NetworkSpec) -> "Normalizer":
        return cls(
            [np.zeros(d) for d in spec.input_dims],
            [np.ones(d) for d in spec.input_dims],
            np.zeros(spec.output_dim),
            1.0,
        )

    @classmethod
    def fit(cls, inputs: list[np.ndarray], targets: np.ndarray) -> "Normalizer":
        means = [x.mean(axis=0) for x in inputs]
        stds = []
        for x in inputs:
            s = x.std(axis=0)
            stds.append(np.where(s > 1e-12, s, 1.0))
        out_mean = targets.mean(axis=0)
        scale = float(np.sqrt(np.mean((targets - out_mean) ** 2)))
        return cls(means, stds, out_mean, scale if scale > 1e-12 else 1.0)

    def inputs(self, xs):
        return [(np.asarray(x, float) - m) / s for x, m, s in zip(xs, self.in_mean, self.in_std)]

    def targets(self, y):
        return (np.asarray(y, float) - self.out_mean) / self.out_scale

    def outputs(self, y):
        return self.out_mean + self.out_scale * y


@dataclass
class Network:
    """A network together with its data normalization."""

    spec: NetworkSpec
    weights: NetworkWeights
    normalizer: Normalizer
    metadata: dict = field(default_factory=dict)

    def __call__(self, branch_inputs) -> np.ndarray:
        return self.normalizer.outputs(forward(self.spec, self.weights, self.normalizer.inputs(branch_inputs)))

    predict = __call__


@dataclass
class TrainingDataset:
    """Branch inputs and targets with a seeded train/validation split."""

    inputs: list[np.ndarray]
    targets: np.ndarray
    val_fraction: float = 0.1

    def __post_init__(self):
        self.inputs = [np.atleast_2d(np.asarray(x, dtype=float)) for x in self.inputs]
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        n = self.targets.shape[0]
        if any(x.shape[0] != n for x in self.inputs):
            raise ValueError("inconsistent record counts across branches and targets")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must be in [0, 1)")

    def __len__(self):
        return self.targets.shape[0]

    def split(self, rng: np.random.Generator):
        n = len(self)
        perm = rng.permutation(n)
        n_val = int(round(self.val_fraction * n))
        if n_val >= n:
            n_val = n - 1
        val, tr = perm[:n_val], perm[n_val:]
        return ([x[tr] for x in self.inputs], self.targets[tr]), ([x[val] for x in self.inputs], self.targets[val])


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    normalize: bool = True
    lr_decay: float = 1.0  # multiplicative learning-rate factor applied after every epoch


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    pass


def _loss(spec, w, xs, y) -> float:
    if y.shape[0] == 0:
        return float("nan")
    r = forward(spec, w, xs) - y
    return float(np.sum(r * r) / y.shape[0])


def train(spec: NetworkSpec, dataset: TrainingDataset, config: TrainConfig = TrainConfig(),
          init: NetworkWeights | None = None) -> tuple[Network, TrainingHistory]:
    """Mini-batch Adam on the mean squared error.

    Losses in the history are reported in raw target units. The result is
    deterministic for a given ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    (x_tr, y_tr), (x_val, y_val) = dataset.split(rng)
    norm = Normalizer.fit(x_tr, y_tr) if config.normalize else Normalizer.identity(spec)
    xs_n, ys_n = norm.inputs(x_tr), norm.targets(y_tr)
    xv_n, yv_n = norm.inputs(x_val), norm.targets(y_val)
    w = init.copy() if init is not None else init_weights(spec, rng)
    w.check(spec)
    state = adam_init(w, config.lr)
    hist = TrainingHistory()
    n = y_tr.shape[0]
    bs = max(1, min(config.batch_size, n))
    scale2 = norm.out_scale**2
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            loss, grads = mse_and_grad(spec, w, [x[idx] for x in xs_n], ys_n[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
            adam_step(state, w, grads)
        state.lr *= config.lr_decay
        tr = _loss(spec, w, xs_n, ys_n) * scale2
        va = _loss(spec, w, xv_n, yv_n) * scale2
        if not math.isfinite(tr):
            raise TrainingDiverged(f"training loss became {tr} after epoch {epoch}")
        hist.train_loss.append(tr)
        hist.val_loss.append(va)
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            logger.debug("epoch %d train %.3e val %.3e", epoch, tr, va)
    meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "final_train_loss": hist.train_loss[-1] if hist.train_loss else None,
        "final_val_loss": hist.val_loss[-1] if hist.val_loss else None,
    }
    return Network(spec, w, norm, meta), hist


# -- persistence ---------------------------------------------------------------


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def network_to_dict(net: Network) -> dict:
    layers = []
    for (o, i), W, b in zip(net.spec.layer_shapes(), net.weights.W, net.weights.b):
        layers.append({"shape": [o, i], "W": W.ravel(order="C").tolist(), "b": b.tolist()})
    nrm = net.normalizer
    return {
        "format": "mfda-network/1",
        "spec": net.spec.to_dict(),
        "layers": layers,
        "normalizer": {
            "in_mean": [m.tolist() for m in nrm.in_mean],
            "in_std": [s.tolist() for s in nrm.in_std],
            "out_mean": nrm.out_mean.tolist(),
            "out_scale": nrm.out_scale,
        },
        "metadata": net.metadata,
    }


def network_from_dict(d: dict) -> Network:
    spec = NetworkSpec.from_dict(d["spec"])
    Ws, bs = [], []
    for layer in d["layers"]:
        o, i = layer["shape"]
        Ws.append(np.array(layer["W"], dtype=float).reshape(o, i))
        bs.append(np.array(layer["b"], dtype=float))
    w = NetworkWeights(Ws, bs)
    w.check(spec)
    n = d["normalizer"]
    norm = Normalizer(
        [np.array(m, float) for m in n["in_mean"]],
        [np.array(s, float) for s in n["in_std"]],
        np.array(n["out_mean"], float),
        float(n["out_scale"]),
    )
    return Network(spec, w, norm, d.get("metadata", {}))


def save_network(net: Network, path) -> None:
    # repr-based float serialization in json round-trips float64 exactly
    _atomic_write_text(path, json.dumps(network_to_dict(net)))


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
