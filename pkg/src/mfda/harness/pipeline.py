"""Offline data generation and training, synthetic observations, online runs, reports.

Directory layout under ``out``::

    config.json
    data/manifest.json, *.npy, pod.bin(+.json)     generate_dataset
    models/mf_level{l}.json, training.json         train_surrogates
    obs/obs.json                                   synthesize_observations
    runs/<scheme>/chain_{i}.csv(+.json), run.json  run_inference
    report/report.json, report.csv                 emit_report
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import darcy as darcy_mod
from .. import rd as rd_mod
from ..diagnostics import autocorrelation, gelman_rubin, summarize, DegenerateChainError
from ..nn import TrainConfig, TrainingDiverged, load_network, save_network
from ..pod import PODBasis, build_pod, load_basis, save_basis
from ..prob import NoiseModel, StandardNormalPrior, UniformBoxPrior, latin_hypercube
from ..samplers import (
    EvalCache,
    FidelityStack,
    LevelSpec,
    MultilevelSampler,
    gaussian_log_likelihood_fn,
    init_from_least_squares,
)
from ..surrogate import (
    MFSurrogate,
    build_mfda_stack,
    darcy_mf_spec,
    rd_mf_spec,
    train_mf_surrogate,
)
from .config import ExperimentConfig
from .io import (
    atomic_write_text,
    load_array,
    read_json,
    save_array,
    verify_manifest,
    write_chain,
    write_json,
    write_manifest,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Streams",
    "DarcyAdapter",
    "RDAdapter",
    "make_adapter",
    "generate_dataset",
    "train_surrogates",
    "load_surrogates",
    "synthesize_observations",
    "run_inference",
    "emit_report",
    "HFCallError",
]

# named random streams derived from the configuration seed
DATA, TEST, OBS, TRAIN, POD, CHAIN = range(6)


class HFCallError(RuntimeError):
    """The high-fidelity model was called during a multi-fidelity online run."""


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(purpose, index)))


class Streams:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, purpose: int, index: int = 0) -> np.random.Generator:
        return stream(self.seed, purpose, index)


# -- problem adapters -------------------------------------------------------------


class DarcyAdapter:
    """Groundwater problem: sensor heads from every mesh level."""

    name = "darcy"

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.problem = darcy_mod.DarcyProblem(
            cfg.levels, cfg.kl_sigma, cfg.kl_corr_length, cfg.kl_modes, cfg.kl_mean
        )
        self.dim = self.problem.dim
        self.n_obs = self.problem.n_obs
        self.prior = StandardNormalPrior(self.dim)
        self.lower = self.upper = None

    @property
    def lf_models(self) -> list[Callable]:
        return list(self.problem.lf_levels)

    @property
    def hf(self):
        return self.problem.hf

    @property
    def mf_inputs(self) -> list[Callable]:
        return self.lf_models

    def hf_calls(self) -> int:
        return self.problem.hf.calls

    def draw(self, n: int, rng) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def truth(self, rng) -> np.ndarray:
        return rng.standard_normal(self.dim)

    def observe_hf(self, theta) -> np.ndarray:
        return self.hf(theta)

    def mf_target(self, theta) -> np.ndarray:
        return self.hf(theta)

    def mf_spec(self, level: int):
        return darcy_mf_spec(level, self.dim, self.n_obs, self.cfg.width or 128)

    def make_surrogate(self, level, network) -> MFSurrogate:
        return MFSurrogate(level, network)

    def gn_kwargs(self) -> dict:
        # the posterior is only identifiable through the prior: d < m
        return {"prior_precision": self.prior.precision(), "x0": np.zeros(self.dim)}

    def gn_model(self, model):
        return model


class RDAdapter:
    """Reaction-diffusion problem with POD-reduced multi-fidelity inputs."""

    name = "reaction-diffusion"

    def __init__(self, cfg: ExperimentConfig, basis: PODBasis | None = None):
        self.cfg = cfg
        self.problem = rd_mod.RDProblem([tuple(l) for l in cfg.levels], ic=cfg.rd_ic)
        self.dim = 2
        self.n_obs = self.problem.n_obs
        self.lower = rd_mod.PARAM_LOWER.copy()
        self.upper = rd_mod.PARAM_UPPER.copy()
        self.prior = UniformBoxPrior(self.lower, self.upper)
        self.basis = basis

    def _need_basis(self) -> PODBasis:
        if self.basis is None:
            raise RuntimeError("the POD basis has not been built or loaded")
        return self.basis

    def _sensor_model(self, level):
        def f(mu):
            return self.problem.sensor_output(level.solve(mu)).ravel()

        f.level = level
        return f

    def _reduced_model(self, level):
        def f(mu):
            return self.problem.reduced_output(level.solve(mu), self._need_basis().Phi)

        f.level = level
        return f

    @property
    def lf_models(self) -> list[Callable]:
        return [self._sensor_model(l) for l in self.problem.lf_levels]

    @property
    def hf(self):
        return self._sensor_model(self.problem.hf)

    @property
    def mf_inputs(self) -> list[Callable]:
        return [self._reduced_model(l) for l in self.problem.lf_levels]

    def hf_calls(self) -> int:
        return self.problem.hf.calls

    def draw(self, n: int, rng) -> np.ndarray:
        return latin_hypercube(n, self.lower, self.upper, rng)

    def truth(self, rng) -> np.ndarray:
        # keep the truth away from the box faces
        pad = 0.1 * (self.upper - self.lower)
        return rng.uniform(self.lower + pad, self.upper - pad)

    def observe_hf(self, theta) -> np.ndarray:
        return self.hf(theta)

    def mf_target(self, theta) -> np.ndarray:
        return self._reduced_model(self.problem.hf)(theta)

    def decoder(self) -> np.ndarray:
        Phi = self._need_basis().Phi
        flat = self.problem.sensors.flat_indices(self.problem.hf_grid)
        N = self.problem.hf_grid.n ** 2
        return np.vstack([Phi[flat], Phi[N + flat]])

    def mf_spec(self, level: int):
        return rd_mf_spec(level, self.dim, self._need_basis().r, self.cfg.width or 64, self.cfg.time_feature)

    def make_surrogate(self, level, network) -> MFSurrogate:
        return MFSurrogate(level, network, time_distributed=True,
                           time_feature=self.cfg.time_feature, decoder=self.decoder())

    def gn_kwargs(self) -> dict:
        return {"x0": 0.5 * (self.lower + self.upper)}

    def gn_model(self, model):
        # finite-difference stencils must stay inside the admissible box
        eps = 1e-6 * (self.upper - self.lower)
        lo, hi = self.lower + eps, self.upper - eps
        return lambda mu: model(np.clip(mu, lo, hi))


def make_adapter(cfg: ExperimentConfig, out=None):
    if cfg.problem == "darcy":
        return DarcyAdapter(cfg)
    basis = None
    if out is not None and (Path(out) / "data" / "pod.bin.json").exists():
        basis = load_basis(Path(out) / "data" / "pod.bin")
    return RDAdapter(cfg, basis)


# -- offline phase ----------------------------------------------------------------


def _evaluate_draws(adapter, models: list[Callable], n: int, rng, label: str):
    """Evaluate every model at ``n`` parameter draws, resampling draws that fail."""
    thetas, outs = [], [[] for _ in models]
    failures = 0
    while len(thetas) < n:
        # refill the remainder as one block (keeps Latin hypercube designs stratified)
        block = adapter.draw(n - len(thetas), rng)
        for th in block:
            try:
                vals = [np.asarray(m(th), float) for m in models]
            except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
                failures += 1
                logger.warning("%s draw failed (%s); resampling", label, exc)
                continue
            thetas.append(th)
            for k, v in enumerate(vals):
                outs[k].append(v)
        if failures > 10 * n + 10:
            raise RuntimeError(f"too many solver failures while generating {label} data")
    return np.array(thetas), [np.array(o) for o in outs], failures


def generate_dataset(cfg: ExperimentConfig, out) -> dict:
    """Draw training and test parameters, evaluate all solvers and persist them."""
    out = Path(out)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    streams = Streams(cfg.seed)
    adapter = make_adapter(cfg)
    t0 = time.perf_counter()
    files: dict[str, str] = {}
    info = {"problem": cfg.problem, "seed": cfg.seed, "n_train": cfg.n_train, "n_test": cfg.n_test,
            "levels": cfg.levels}

    if cfg.problem == "reaction-diffusion":
        mus = latin_hypercube(cfg.n_pod, adapter.lower, adapter.upper, streams(POD))
        snaps = []
        for mu in mus:
            snaps.append(adapter.problem.hf.solve(mu).snapshots(1))
        S = np.hstack(snaps)
        del snaps
        basis = build_pod(S, cfg.pod_energy, method="auto", min_rank=cfg.pod_min_rank)
        del S
        save_basis(basis, data / "pod.bin")
        adapter.basis = basis
        files["pod"] = "pod.bin"
        files["pod_header"] = "pod.bin.json"
        info["pod"] = {"r": basis.r, "energy": basis.energy, "n_draws": cfg.n_pod,
                       "draws": mus.tolist()}
        logger.info("POD basis: r=%d retains %.4f of the energy", basis.r, basis.energy)

    n_lf = cfg.n_lf
    models = [*adapter.mf_inputs, adapter.mf_target]
    theta, outs, fails = _evaluate_draws(adapter, models, cfg.n_train, streams(DATA), "training")
    files["theta_train"] = "theta_train.npy"
    save_array(data / "theta_train.npy", theta)
    for l in range(n_lf):
        files[f"lf{l + 1}_train"] = f"lf{l + 1}_train.npy"
        save_array(data / f"lf{l + 1}_train.npy", outs[l])
    files["hf_train"] = "hf_train.npy"
    save_array(data / "hf_train.npy", outs[-1])
    info["train_failures"] = fails

    # held-out set: surrogate inputs, surrogate targets and sensor outputs of every level
    if cfg.n_test > 0:
        test_models = list(models)
        if cfg.problem == "reaction-diffusion":
            test_models += [*adapter.lf_models, adapter.hf]
        theta_t, outs_t, fails_t = _evaluate_draws(adapter, test_models, cfg.n_test, streams(TEST), "test")
        files["theta_test"] = "theta_test.npy"
        save_array(data / "theta_test.npy", theta_t)
        for l in range(n_lf):
            files[f"lf{l + 1}_test"] = f"lf{l + 1}_test.npy"
            save_array(data / f"lf{l + 1}_test.npy", outs_t[l])
        files["hf_test"] = "hf_test.npy"
        save_array(data / "hf_test.npy", outs_t[n_lf])
        if cfg.problem == "reaction-diffusion":
            for l in range(n_lf + 1):
                name = f"f{l + 1}_test" if l < n_lf else "fhf_test"
                files[name] = f"{name}.npy"
                save_array(data / f"{name}.npy", outs_t[n_lf + 1 + l])
        info["test_failures"] = fails_t

    manifest = write_manifest(data / "manifest.json", files, info)
    write_json(data / "timing.json", {"generate_seconds": time.perf_counter() - t0})
    logger.info("dataset %s written to %s", manifest["id"][:12], data)
    return manifest


def train_surrogates(cfg: ExperimentConfig, out) -> list[Path]:
    """Train ``f_MF^(l)`` for every level; the dataset is hash-checked first."""
    out = Path(out)
    data = out / "data"
    manifest = verify_manifest(data / "manifest.json")
    adapter = make_adapter(cfg, out)
    theta = load_array(data / "theta_train.npy")
    lf = [load_array(data / f"lf{l + 1}_train.npy") for l in range(cfg.n_lf)]
    target = load_array(data / "hf_train.npy")
    models = out / "models"
    models.mkdir(parents=True, exist_ok=True)
    paths, timing = [], {}
    for level in range(1, cfg.n_lf + 1):
        tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                         seed=int(stream(cfg.seed, TRAIN, level).integers(2**63)),
                         lr_decay=cfg.lr_decay)
        t0 = time.perf_counter()
        try:
            sur, hist = train_mf_surrogate(
                level, adapter.mf_spec(level), theta, lf, target, tc,
                time_distributed=cfg.problem == "reaction-diffusion",
                time_feature=cfg.time_feature,
            )
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"level {level}: {exc}") from exc
        timing[f"level{level}"] = time.perf_counter() - t0
        sur.network.metadata["dataset"] = manifest["id"]
        path = models / f"mf_level{level}.json"
        save_network(sur.network, path)
        paths.append(path)
        logger.info("level %d trained: val loss %.3e (%.1fs)", level, hist.val_loss[-1] if hist.val_loss else float("nan"),
                    timing[f"level{level}"])
    write_json(models / "training.json", {"seconds": timing, "dataset": manifest["id"]})
    return paths


def load_surrogates(cfg: ExperimentConfig, out, adapter=None) -> list[MFSurrogate]:
    out = Path(out)
    adapter = adapter or make_adapter(cfg, out)
    surs = []
    for level in range(1, cfg.n_lf + 1):
        path = out / "models" / f"mf_level{level}.json"
        if not path.exists():
            raise FileNotFoundError(f"missing surrogate weights for level {level}: {path}")
        surs.append(adapter.make_surrogate(level, load_network(path)))
    return surs


def synthesize_observations(cfg: ExperimentConfig, out, theta_true=None, sigma=None, seed=None) -> dict:
    """``y_obs = f_HF(theta_true) + eps`` persisted with the truth and the seed."""
    out = Path(out)
    seed = cfg.seed if seed is None else int(seed)
    sigma = cfg.noise_sigma if sigma is None else float(sigma)
    adapter = make_adapter(cfg, out)
    rng = stream(seed, OBS)
    theta_true = adapter.truth(rng) if theta_true is None else np.asarray(theta_true, float)
    if adapter.prior.log_density(theta_true) == -math.inf:
        raise ValueError("theta_true lies outside the prior support")
    clean = np.asarray(adapter.observe_hf(theta_true), float).ravel()
    y = clean + sigma * rng.standard_normal(clean.size) if sigma > 0 else clean.copy()
    obs = {"theta_true": theta_true.tolist(), "y_obs": y.tolist(), "sigma": sigma, "seed": seed,
           "problem": cfg.problem}
    write_json(out / "obs" / "obs.json", obs)
    return obs


# -- online phase -----------------------------------------------------------------


@dataclass
class RunResult:
    scheme: str
    chains: list
    report: dict
    hf_calls_online: int
    theta0: np.ndarray
    sidecars: list = field(default_factory=list)


def _build_stack(cfg, scheme, adapter, y_obs, noise, proposal, surrogates=None, cache=None):
    prior = adapter.prior
    if scheme == "mh":
        return FidelityStack([LevelSpec(gaussian_log_likelihood_fn(adapter.hf, y_obs, noise), label="HF")],
                             prior, proposal)
    if scheme == "mlda":
        fns = [*adapter.lf_models, adapter.hf]
        Js = [int(j) for j in cfg.mlda_subchains] + [None]
        labels = [f"LF{k + 1}" for k in range(cfg.n_lf)] + ["HF"]
        levels = [LevelSpec(gaussian_log_likelihood_fn(f, y_obs, noise), J, lab) for f, J, lab in zip(fns, Js, labels)]
        return FidelityStack(levels, prior, proposal)
    return build_mfda_stack(surrogates, adapter.mf_inputs, cache, y_obs, noise, prior, proposal,
                            [int(j) for j in cfg.mfda_subchains])


def run_inference(
    cfg: ExperimentConfig,
    out,
    obs: dict | None = None,
    scheme: str | None = None,
    surrogates: list[MFSurrogate] | None = None,
    adapter=None,
    init=None,
) -> RunResult:
    """Multi-chain run from a Gauss-Newton start, stopped by R-hat or the sample cap."""
    out = Path(out)
    scheme = scheme or cfg.scheme
    adapter = adapter or make_adapter(cfg, out)
    obs = obs or read_json(out / "obs" / "obs.json")
    y_obs = np.asarray(obs["y_obs"], float)
    sigma = float(obs["sigma"]) if obs["sigma"] > 0 else cfg.noise_sigma
    noise = NoiseModel(sigma, y_obs.size)
    if scheme == "mfda" and surrogates is None:
        surrogates = load_surrogates(cfg, out, adapter)
    hf_before = adapter.hf_calls()

    # initialization with the finest model available to the scheme
    t0 = time.perf_counter()
    if init is None:
        if scheme == "mfda":
            top = build_mfda_stack(surrogates, adapter.mf_inputs, EvalCache(), y_obs, noise, adapter.prior,
                                   _unit_proposal(adapter.dim), [int(j) for j in cfg.mfda_subchains])
            init_model = top.levels[-1].log_likelihood_fn.predict
        else:
            init_model = adapter.hf
        kw = adapter.gn_kwargs()
        init = init_from_least_squares(adapter.gn_model(init_model), y_obs, noise, **kw)
        theta0 = np.asarray(init.theta0, float)
        if adapter.lower is not None:
            eps = 1e-6 * (adapter.upper - adapter.lower)
            theta0 = np.clip(theta0, adapter.lower + eps, adapter.upper - eps)
        init = init._replace(theta0=theta0)
    init_seconds = time.perf_counter() - t0

    samplers, caches = [], []
    for i in range(cfg.n_chains):
        cache = EvalCache() if scheme == "mfda" else None
        stack = _build_stack(cfg, scheme, adapter, y_obs, noise, init.proposal, surrogates, cache)
        samplers.append(MultilevelSampler(stack, init.theta0, stream(cfg.seed, CHAIN, i)))
        caches.append(cache)

    converged = False
    rhat = None
    n = 0
    chunk = max(1, int(cfg.check_every))
    while n < cfg.max_samples:
        step = min(chunk, cfg.max_samples - n)
        for s in samplers:
            s.sample(step)
        n += step
        if len(samplers) >= 2:
            start = int(math.floor(cfg.burn_in * n))
            if n - start >= 10:
                arrs = [s.samples(start) for s in samplers]
                try:
                    rhat = [gelman_rubin([a[:, k] for a in arrs]) for k in range(adapter.dim)]
                except DegenerateChainError:
                    rhat = None
                if rhat is not None and max(rhat) < cfg.rhat_threshold and n >= cfg.min_samples:
                    converged = True
                    break
    hf_online = adapter.hf_calls() - hf_before
    if scheme == "mfda" and hf_online != 0:
        raise HFCallError(f"{hf_online} high-fidelity calls during a multi-fidelity run")

    chains = [s.chain() for s in samplers]
    run_dir = out / "runs" / scheme
    run_dir.mkdir(parents=True, exist_ok=True)
    sidecars = []
    for i, (ch, cache) in enumerate(zip(chains, caches)):
        side = {
            "scheme": scheme,
            "chain": i,
            "seed": cfg.seed,
            "stream": [CHAIN, i],
            "levels": ch.level_labels,
            "subchain_lengths": samplers[i].stack.subchain_lengths,
            "per_level_accept_counts": ch.per_level_accept_counts.tolist(),
            "per_level_proposal_counts": ch.per_level_proposal_counts.tolist(),
            "per_level_evaluations": ch.evaluations.tolist(),
            "per_level_requests": ch.requests.tolist(),
            "wall_time": ch.wall_time,
            "n_samples": len(ch),
        }
        if cache is not None:
            side["cache"] = cache.stats()
            side["lf_calls"] = [cache.misses.get(j, 0) for j in range(cfg.n_lf)]
        sidecars.append(side)
        write_chain(run_dir / f"chain_{i}.csv", ch.samples, ch.log_likelihoods, ch.accepted, side)

    start = int(math.floor(cfg.burn_in * n))
    post = [c.samples[start:] for c in chains]
    wall = float(sum(c.wall_time for c in chains))
    acc = np.mean([c.acceptance_rates for c in chains], axis=0).tolist()
    rep = summarize(post, wall, obs.get("theta_true"), acc).to_dict()
    rep.update({
        "scheme": scheme,
        "problem": cfg.problem,
        "converged": converged,
        "final_rhat": rhat,
        "samples_per_chain": n,
        "burn_in": cfg.burn_in,
        "init_seconds": init_seconds,
        "init_converged": bool(getattr(init, "converged", True)),
        "online_seconds_per_chain": wall / len(chains),
        "hf_calls_online": hf_online,
        "theta0": np.asarray(init.theta0).tolist(),
    })
    if not converged:
        rep["flags"].append(f"R-hat did not fall below {cfg.rhat_threshold} within {n} samples per chain")
    write_json(run_dir / "run.json", rep)
    _write_plot_data(run_dir, post)
    return RunResult(scheme, chains, rep, hf_online, np.asarray(init.theta0), sidecars)


def _unit_proposal(dim):
    from ..prob import Proposal

    return Proposal.isotropic(dim)


def _write_plot_data(run_dir: Path, post: list[np.ndarray], n_lags: int = 200, bins: int = 30) -> None:
    lines = ["chain,iter," + ",".join(f"theta_{k}" for k in range(post[0].shape[1]))]
    for i, p in enumerate(post):
        for j, row in enumerate(p):
            lines.append(f"{i},{j}," + ",".join(repr(float(x)) for x in row))
    atomic_write_text(run_dir / "trace.csv", "\n".join(lines) + "\n")

    lines = ["component,lag,rho"]
    for k in range(post[0].shape[1]):
        try:
            rho = autocorrelation(post[0][:, k], n_lags)
        except (DegenerateChainError, ValueError):
            continue
        lines += [f"{k},{lag},{r!r}" for lag, r in enumerate(rho.tolist())]
    atomic_write_text(run_dir / "autocorr.csv", "\n".join(lines) + "\n")

    pooled = np.vstack(post)
    lines = ["component,bin_left,bin_right,count"]
    for k in range(pooled.shape[1]):
        counts, edges = np.histogram(pooled[:, k], bins=bins)
        lines += [f"{k},{edges[b]!r},{edges[b + 1]!r},{int(counts[b])}" for b in range(bins)]
    atomic_write_text(run_dir / "hist.csv", "\n".join(lines) + "\n")


# -- reporting --------------------------------------------------------------------


REPORT_COLUMNS = ["scheme", "offline_seconds", "online_seconds", "total_seconds", "time_per_ess",
                  "min_ess", "rmse", "converged", "hf_calls_online"]


def _offline_seconds(out: Path, scheme: str) -> float:
    if scheme != "mfda":
        return 0.0
    total = 0.0
    gen = out / "data" / "timing.json"
    tr = out / "models" / "training.json"
    if gen.exists():
        total += float(read_json(gen)["generate_seconds"])
    if tr.exists():
        total += float(sum(read_json(tr)["seconds"].values()))
    return total


def emit_report(runs: list[dict], out=None) -> dict:
    """Comparison table over run reports; output depends only on ``runs``."""
    rows = []
    truths = set()
    for r in runs:
        off = float(r.get("offline_seconds", 0.0))
        on = float(r["online_seconds_per_chain"])
        rows.append({
            "scheme": r["scheme"],
            "offline_seconds": off,
            "online_seconds": on,
            "total_seconds": off + on,
            "time_per_ess": float(r["time_per_ess"]),
            "min_ess": float(r["min_ess"]),
            "rmse": r.get("rmse_vs_truth"),
            "converged": bool(r.get("converged", False)),
            "hf_calls_online": int(r.get("hf_calls_online", 0)),
        })
        if r.get("theta_true") is not None:
            truths.add(tuple(r["theta_true"]))
    report = {"rows": rows, "columns": REPORT_COLUMNS, "shared_truth": len(truths) <= 1}
    if out is not None:
        out = Path(out)
        write_json(out / "report.json", report)
        lines = [",".join(REPORT_COLUMNS)]
        for row in rows:
            lines.append(",".join("" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else str(row[c]))
                                  for c in REPORT_COLUMNS))
        atomic_write_text(out / "report.csv", "\n".join(lines) + "\n")
    return report


def collect_runs(out) -> list[dict]:
    """Run reports found under ``out/runs`` with offline costs and the shared truth attached."""
    out = Path(out)
    obs_path = out / "obs" / "obs.json"
    truth = read_json(obs_path)["theta_true"] if obs_path.exists() else None
    runs = []
    for scheme in ("mh", "mlda", "mfda"):
        p = out / "runs" / scheme / "run.json"
        if p.exists():
            r = read_json(p)
            r["offline_seconds"] = _offline_seconds(out, scheme)
            r["theta_true"] = truth
            runs.append(r)
    return runs
