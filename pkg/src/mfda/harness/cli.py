"""Command line entry point: ``mfda <subcommand> [--config PATH] [--preset NAME] [--seed N] [--out DIR]``.

The configuration used by ``generate-data`` is stored as ``<out>/config.json``
and reused by later subcommands unless ``--config`` or ``--preset`` is given.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PRESETS, ExperimentConfig, load_config
from .io import write_json
from . import pipeline

logger = logging.getLogger("mfda")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfda", description="Multi-fidelity delayed acceptance experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON configuration file")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
        sp.add_argument("--seed", type=_seed, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        return sp

    common(sub.add_parser("generate-data", help="draw parameters and evaluate all solvers"))
    common(sub.add_parser("train", help="train one multi-fidelity surrogate per level"))
    so = common(sub.add_parser("synthesize-obs", help="noisy high-fidelity observations of a random truth"))
    so.add_argument("--sigma", type=float, help="noise standard deviation")
    sa = common(sub.add_parser("sample", help="run MCMC chains"))
    sa.add_argument("--scheme", choices=["mh", "mlda", "mfda"], help="sampling scheme")
    sa.add_argument("--chains", type=int, help="number of chains")
    sa.add_argument("--max-samples", type=int, help="per-chain sample cap")
    common(sub.add_parser("report", help="comparison table over completed runs"))
    return p


def resolve_config(args) -> ExperimentConfig:
    stored = args.out / "config.json"
    path = args.config
    if path is None and args.preset is None and stored.exists():
        path = stored
    over = {"seed": args.seed}
    if getattr(args, "scheme", None):
        over["scheme"] = args.scheme
    if getattr(args, "chains", None):
        over["n_chains"] = args.chains
    if getattr(args, "max_samples", None):
        over["max_samples"] = args.max_samples
    if path is None and args.preset is None:
        return load_config(None, "darcy-desk", **over)
    return load_config(path, args.preset, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = args.out
        if args.command == "generate-data":
            m = pipeline.generate_dataset(cfg, out)
            print(f"dataset {m['id']} -> {out / 'data'}")
        elif args.command == "train":
            for path in pipeline.train_surrogates(cfg, out):
                print(path)
        elif args.command == "synthesize-obs":
            write_json(out / "config.json", cfg.to_dict())
            obs = pipeline.synthesize_observations(cfg, out, sigma=args.sigma)
            print(f"{len(obs['y_obs'])} observations, sigma={obs['sigma']} -> {out / 'obs' / 'obs.json'}")
        elif args.command == "sample":
            res = pipeline.run_inference(cfg, out)
            r = res.report
            print(f"{res.scheme}: {r['samples_per_chain']} samples/chain, min ESS {r['min_ess']:.1f}, "
                  f"time/ESS {r['time_per_ess']:.4g}s, converged={r['converged']}")
        elif args.command == "report":
            runs = pipeline.collect_runs(out)
            if not runs:
                raise FileNotFoundError(f"no completed runs under {out / 'runs'}")
            rep = pipeline.emit_report(runs, out / "report")
            for row in rep["rows"]:
                print(row)
    except (FileNotFoundError, KeyError, ValueError, RuntimeError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
