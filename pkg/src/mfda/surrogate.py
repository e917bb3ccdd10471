"""Multi-fidelity surrogates and the likelihoods built on them.

A level-``l`` surrogate is a branch-fusion network fed with the parameters and
the outputs of the ``l`` coarsest solvers. Solver outputs are memoised in an
:class:`~mfda.samplers.EvalCache` shared by all levels of a chain, so a finer
level reuses every coarse output already computed for the same parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import Network, NetworkSpec, TrainConfig, TrainingDataset, train
from .prob import NoiseModel, Prior, Proposal, log_likelihood
from .samplers import EvalCache, FidelityStack, LevelSpec

logger = logging.getLogger(__name__)

__all__ = [
    "darcy_mf_spec",
    "rd_mf_spec",
    "MFSurrogate",
    "MFLevelLikelihood",
    "predict_mf",
    "train_mf_surrogate",
    "build_mfda_stack",
]


def darcy_mf_spec(level: int, n_params: int = 64, n_obs: int = 25, width: int = 128) -> NetworkSpec:
    """Groundwater network: deep parameter branch, one linear branch per solver."""
    if level < 1:
        raise ValueError("level must be >= 1")
    theta_branch = (n_params, [(width, "gelu")] * 4 + [(width, "linear")])
    lf_branches = [(n_obs, [(width, "linear")])] * level
    return NetworkSpec.build(
        [theta_branch, *lf_branches],
        [(width, "gelu"), (width, "gelu"), (n_obs, "linear")],
    )


def rd_mf_spec(level: int, n_params: int = 2, r: int = 25, width: int = 64,
               time_feature: bool = False) -> NetworkSpec:
    """Reaction-diffusion network applied independently at every time step.

    The two recurrent layers of the reference design are replaced by two
    ``tanh`` dense layers of the same width. With ``time_feature`` the
    parameter branch also receives the normalized output time.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    p = n_params + (1 if time_feature else 0)
    mu_branch = (p, [(width, "gelu")] * 3 + [(width, "linear")])
    lf_branches = [(r, [(width, "linear")])] * level
    return NetworkSpec.build(
        [mu_branch, *lf_branches],
        [(width, "gelu"), (width, "tanh"), (width, "tanh"), (width, "gelu"), (r, "linear")],
    )


@dataclass
class MFSurrogate:
    """``f_MF^(l)``: a trained network plus how to feed and decode it.

    For time-distributed networks the solver outputs are ``(r, T)`` coefficient
    trajectories; the network is applied to every column and the result is
    decoded to observables with ``decoder`` (``(n_obs, r)``) when given.
    """

    level: int
    network: Network
    time_distributed: bool = False
    time_feature: bool = False
    decoder: np.ndarray | None = None

    def _inputs(self, theta, lf_outputs):
        if len(lf_outputs) != self.level:
            raise ValueError(f"level {self.level} surrogate needs {self.level} solver outputs, got {len(lf_outputs)}")
        theta = np.asarray(theta, float)
        if not self.time_distributed:
            return [theta, *[np.asarray(z, float).ravel() for z in lf_outputs]]
        zs = [np.asarray(z, float) for z in lf_outputs]
        T = zs[0].shape[1]
        p = np.broadcast_to(theta, (T, theta.size))
        if self.time_feature:
            p = np.column_stack([p, np.arange(1, T + 1) / T])
        return [p, *[z.T for z in zs]]

    def coefficients(self, theta, lf_outputs) -> np.ndarray:
        """Raw network output (``(r, T)`` for time-distributed networks)."""
        out = self.network(self._inputs(theta, lf_outputs))
        return out.T if self.time_distributed else out

    def __call__(self, theta, lf_outputs) -> np.ndarray:
        out = self.coefficients(theta, lf_outputs)
        if self.decoder is not None:
            out = self.decoder @ out
        return np.ravel(out)


def predict_mf(surrogates: Sequence[MFSurrogate], level: int, theta, lf_outputs) -> np.ndarray:
    """``f_MF^(level)(theta)`` from solver outputs ordered coarsest first."""
    if not 1 <= level <= len(surrogates):
        raise ValueError(f"no trained surrogate for level {level}")
    sur = surrogates[level - 1]
    if sur.level != level:
        raise ValueError("surrogate list is not ordered by level")
    return sur(theta, list(lf_outputs))


class MFLevelLikelihood:
    """``theta -> log L_MF^(l)(theta)`` with cached coarse-solver outputs.

    ``lf_models[j]`` is solver ``j + 1``; only the first ``surrogate.level``
    are touched. No high-fidelity model is reachable from this object.
    """

    def __init__(
        self,
        surrogate: MFSurrogate,
        lf_models: Sequence[Callable],
        cache: EvalCache,
        y_obs,
        noise: NoiseModel,
    ):
        if len(lf_models) < surrogate.level:
            raise ValueError("not enough low-fidelity models for this level")
        self.surrogate = surrogate
        self.lf_models = list(lf_models[: surrogate.level])
        self.cache = cache
        self.y_obs = np.asarray(y_obs, float).ravel()
        self.noise = noise
        self.calls = 0

    @property
    def level(self) -> int:
        return self.surrogate.level

    def lf_outputs(self, theta) -> list:
        return [self.cache.get_or_compute(j, theta, m) for j, m in enumerate(self.lf_models)]

    def predict(self, theta) -> np.ndarray:
        return self.surrogate(theta, self.lf_outputs(theta))

    def __call__(self, theta) -> float:
        self.calls += 1
        return log_likelihood(self.predict(theta), self.y_obs, self.noise)


def train_mf_surrogate(
    level: int,
    spec: NetworkSpec,
    theta: np.ndarray,
    lf_outputs: Sequence[np.ndarray],
    targets: np.ndarray,
    config: TrainConfig,
    time_distributed: bool = False,
    time_feature: bool = False,
    decoder: np.ndarray | None = None,
):
    """Fit ``f_MF^(level)`` on records ``(theta_i, lf_1(theta_i) .. lf_l(theta_i)) -> target_i``.

    For time-distributed networks ``lf_outputs[j]`` and ``targets`` are
    ``(N, r, T)`` arrays; every time step becomes one training row and the
    train/validation split is drawn over whole trajectories.
    """
    theta = np.atleast_2d(np.asarray(theta, float))
    lf = [np.asarray(x, float) for x in lf_outputs[:level]]
    targets = np.asarray(targets, float)
    if len(lf) != level:
        raise ValueError(f"level {level} needs {level} solver output arrays")
    if not time_distributed:
        ds = TrainingDataset([theta, *[x.reshape(len(x), -1) for x in lf]], targets.reshape(len(targets), -1))
        net, hist = train(spec, ds, config)
    else:
        net, hist = _train_time_distributed(spec, theta, lf, targets, config, time_feature)
    net.metadata["level"] = level
    sur = MFSurrogate(level, net, time_distributed, time_feature, decoder)
    return sur, hist


def _train_time_distributed(spec, theta, lf, targets, config, time_feature):
    N, r, T = targets.shape
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(N)
    n_val = int(round(0.1 * N)) if N > 1 else 0
    order = np.concatenate([perm[n_val:], perm[:n_val]])

    def rows(idx):
        p = np.repeat(theta[idx], T, axis=0)
        if time_feature:
            p = np.column_stack([p, np.tile(np.arange(1, T + 1) / T, len(idx))])
        zs = [x[idx].transpose(0, 2, 1).reshape(-1, r) for x in lf]
        return [p, *zs], targets[idx].transpose(0, 2, 1).reshape(-1, r)

    inputs, y = rows(order)
    # trajectories are already shuffled; keep them contiguous so the split is by trajectory
    frac = n_val * T / (N * T)
    ds = _OrderedDataset(inputs, y, frac)
    return train(spec, ds, config)


class _OrderedDataset(TrainingDataset):
    """Validation rows are the trailing block instead of a random subset."""

    def split(self, rng):
        n = len(self)
        n_val = int(round(self.val_fraction * n))
        tr, val = np.arange(n - n_val), np.arange(n - n_val, n)
        return ([x[tr] for x in self.inputs], self.targets[tr]), ([x[val] for x in self.inputs], self.targets[val])


def build_mfda_stack(
    surrogates: Sequence[MFSurrogate],
    lf_models: Sequence[Callable],
    cache: EvalCache,
    y_obs,
    noise: NoiseModel,
    prior: Prior,
    proposal: Proposal,
    subchain_lengths: Sequence[int],
) -> FidelityStack:
    """Stack whose level ``l`` evaluates ``f_MF^(l)``; all levels share ``cache``."""
    if len(subchain_lengths) != len(surrogates) - 1:
        raise ValueError("need one sub-chain length per level except the finest")
    levels = []
    for k, sur in enumerate(surrogates):
        fn = MFLevelLikelihood(sur, lf_models, cache, y_obs, noise)
        J = subchain_lengths[k] if k < len(subchain_lengths) else None
        levels.append(LevelSpec(fn, J, label=f"MF{sur.level}"))
    return FidelityStack(levels, prior, proposal)
