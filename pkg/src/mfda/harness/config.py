"""Experiment configuration and the named presets.

A configuration is one JSON object; every key is optional and falls back to
the preset (``"preset": "<name>"``) or to the defaults below. Reference-scale
constants are kept as defaults of the ``*-full`` presets.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

from .io import read_json

__all__ = ["ExperimentConfig", "PRESETS", "load_config", "preset"]

PROBLEMS = ("darcy", "reaction-diffusion")
SCHEMES = ("mh", "mlda", "mfda")


@dataclass
class ExperimentConfig:
    problem: str = "darcy"
    scheme: str = "mfda"
    # darcy: cells per axis per level; reaction-diffusion: [n, steps, substeps] per level.
    # The last entry is the high-fidelity model.
    levels: list = field(default_factory=lambda: [5, 10, 25, 50])
    mlda_subchains: list = field(default_factory=lambda: [5, 2, 2])
    mfda_subchains: list = field(default_factory=lambda: [10, 2])
    n_train: int = 2000
    n_test: int = 200
    n_pod: int = 20
    pod_energy: float = 0.95
    pod_min_rank: int = 0
    noise_sigma: float = 0.01
    seed: int = 0
    n_chains: int = 5
    check_every: int = 100
    rhat_threshold: float = 1.01
    max_samples: int = 100_000
    min_samples: int = 0
    burn_in: float = 0.2
    # Darcy random field
    kl_sigma: float = 0.1
    kl_corr_length: float = 0.1
    kl_modes: int = 64
    kl_mean: float = 1.0
    # reaction-diffusion
    rd_ic: str = "amplitude-phase"
    time_feature: bool = False
    # surrogate training
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.99
    width: int | None = None
    out_dir: str = "runs"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        n_lf = len(self.levels) - 1
        if n_lf < 1:
            raise ValueError("need at least one low-fidelity level and the high-fidelity model")
        # MLDA: all LF levels + HF; MFDA: one surrogate level per LF solver
        if len(self.mlda_subchains) != n_lf:
            raise ValueError(f"MLDA needs {n_lf} sub-chain lengths for {n_lf + 1} levels")
        if len(self.mfda_subchains) != n_lf - 1:
            raise ValueError(f"MFDA needs {n_lf - 1} sub-chain lengths for {n_lf} surrogate levels")
        if any(int(j) < 1 for j in [*self.mlda_subchains, *self.mfda_subchains]):
            raise ValueError("sub-chain lengths must be >= 1")
        if not self.noise_sigma >= 0:
            raise ValueError("noise sigma must be non-negative")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn-in fraction must lie in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_lf(self) -> int:
        return len(self.levels) - 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, dict] = {
    "darcy-full": {
        "problem": "darcy",
        "levels": [5, 10, 25, 50, 100],
        "mlda_subchains": [5, 2, 2, 1],
        "mfda_subchains": [10, 2, 1],
        "n_train": 16000,
        "noise_sigma": 0.01,
        "lr": 1e-4,
        "lr_decay": 1.0,
        "batch_size": 32,
    },
    "darcy-desk": {
        "problem": "darcy",
        "levels": [5, 10, 25, 50],
        "mlda_subchains": [5, 2, 2],
        "mfda_subchains": [10, 2],
        "n_train": 2000,
        "noise_sigma": 0.01,
        "lr": 1e-4,
        "lr_decay": 1.0,
        "batch_size": 32,
    },
    "rd-full": {
        "problem": "reaction-diffusion",
        "levels": [[16, 50, 2], [32, 100, 1], [64, 250, 1], [128, 250, 1]],
        "mlda_subchains": [5, 5, 1],
        "mfda_subchains": [5, 5],
        "n_train": 500,
        "n_test": 20,
        "noise_sigma": 0.2,
        "pod_min_rank": 25,
        "epochs": 200,
    },
    "rd-desk": {
        "problem": "reaction-diffusion",
        "levels": [[16, 50, 2], [32, 100, 1], [64, 250, 1]],
        "mlda_subchains": [5, 5],
        "mfda_subchains": [5],
        "n_train": 200,
        "n_test": 20,
        "noise_sigma": 0.2,
        "pod_min_rank": 25,
        "epochs": 200,
    },
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = copy.deepcopy(PRESETS[name])
    d.update(overrides)
    return ExperimentConfig(**d)


def load_config(path=None, preset_name: str | None = None, **overrides) -> ExperimentConfig:
    """Merge defaults, a preset, a JSON file and explicit overrides (in that order)."""
    d: dict = {}
    file_cfg = read_json(path) if path else {}
    name = preset_name or file_cfg.pop("preset", None)
    if name:
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        d.update(copy.deepcopy(PRESETS[name]))
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(file_cfg) - known
    if unknown:
        raise KeyError(f"unknown configuration keys: {sorted(unknown)}")
    d.update(file_cfg)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**d)
