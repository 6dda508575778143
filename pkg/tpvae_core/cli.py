#!/usr/bin/env python3
"""
TP-VAE command-line interface.

Commands: gen-synth, run, ablate, sweep-tau, scenarios.
Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import TPVAEConfig
from .data.dataset import FORMATS, SynthSpec, file_sha256, gen_synthetic, load_dataset, save_dataset
from .data.episodes import PREPROCESS_MODES, EpisodeSpec
from .errors import TPVAEError
from .harness import DEFAULT_TAUS, EvalSummary, ablate, compare_baseline, evaluate, scenario_battery, sweep_tau
from .models.objective import REDUCTIONS, LossWeights
from .solver import PSI_SCALINGS, SolverConfig

logger = logging.getLogger(__name__)

EPISODES_HEADER = ["episode_index", "scenario", "config", "accuracy", "iters_run", "final_total_loss"]
SUMMARY_KEYS = ("command", "dataset_hash", "spec", "solver", "episodes", "mean_accuracy", "ci95", "arms", "curves")
TP_FORM_FLAGS = {"jensen": "jensen_marginal", "literal": "literal", "sample": "sample"}

Arm = Tuple[str, str, EvalSummary]  # (scenario, config, summary)


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not (math.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"expected a finite non-negative number, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"expected a finite positive number, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text}")


def _float_list(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text}")
    if not values or any(not (math.isfinite(v) and v > 0) for v in values):
        raise argparse.ArgumentTypeError(f"expected finite positive numbers, got {text}")
    return values


def _add_episode_flags(parser: argparse.ArgumentParser, with_spec: bool = True) -> None:
    defaults = SolverConfig()
    weights = defaults.weights
    parser.add_argument("--data", type=Path, required=True, help="FSE1 or CSV embedding file")
    parser.add_argument("--data-format", choices=FORMATS, default=None, help="override extension-based detection")
    if with_spec:
        parser.add_argument("--way", type=_positive_int, default=5)
        parser.add_argument("--shot", type=_positive_int, default=1)
        parser.add_argument("--query", type=_int_list, default=None, help="per-class query counts, e.g. 15,15,15,15,15")
    parser.add_argument("--episodes", type=_positive_int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tau", type=_positive_float, default=defaults.tau)
    parser.add_argument("--lr", type=_positive_float, default=defaults.lr)
    parser.add_argument("--momentum", type=_non_negative_float, default=defaults.momentum)
    parser.add_argument("--iters", type=_non_negative_int, default=defaults.max_iters)
    parser.add_argument("--tol", type=_non_negative_float, default=defaults.tol)
    parser.add_argument("--sigma-enc", type=_non_negative_float, default=defaults.sigma_enc)
    parser.add_argument("--mc-samples", type=_positive_int, default=defaults.L)
    parser.add_argument("--preprocess", choices=PREPROCESS_MODES, default="none")
    parser.add_argument("--tp-form", choices=sorted(TP_FORM_FLAGS), default="jensen")
    parser.add_argument("--reduction", choices=REDUCTIONS, default=weights.reduction)
    parser.add_argument("--w-ce", type=_non_negative_float, default=weights.w_ce)
    parser.add_argument("--w-recon", type=_non_negative_float, default=weights.w_recon)
    parser.add_argument("--w-lik", type=_non_negative_float, default=weights.w_lik)
    parser.add_argument("--w-tp", type=_non_negative_float, default=weights.w_tp)
    parser.add_argument("--d-hidden", type=_positive_int, default=None)
    parser.add_argument("--psi-scaling", choices=PSI_SCALINGS, default=defaults.psi_scaling, help="per-class prototype step scaling")
    parser.add_argument("--workers", type=_non_negative_int, default=None, help="0 = available parallelism")
    parser.add_argument("--out", type=Path, default=None, help="results directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpvae", description="Transductive few-shot inference with TP-VAE")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-synth", help="generate a synthetic Gaussian-mixture dataset")
    gen.add_argument("--classes", type=int, default=20)
    gen.add_argument("--dim", type=_positive_int, default=64)
    gen.add_argument("--per-class", type=_positive_int, default=200)
    gen.add_argument("--sep", type=_non_negative_float, default=4.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--format", choices=FORMATS, default="fse1")
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen_synth)

    run = commands.add_parser("run", help="evaluate the solver over many episodes")
    _add_episode_flags(run)
    run.add_argument("--with-baseline", action="store_true", help="add a paired prototype-baseline arm")
    run.set_defaults(handler=cmd_run)

    abl = commands.add_parser("ablate", help="compare the four loss configurations")
    _add_episode_flags(abl)
    abl.set_defaults(handler=cmd_ablate)

    sweep = commands.add_parser("sweep-tau", help="evaluate a list of temperatures")
    _add_episode_flags(sweep)
    sweep.add_argument("--taus", type=_float_list, default=list(DEFAULT_TAUS))
    sweep.set_defaults(handler=cmd_sweep_tau)

    scen = commands.add_parser("scenarios", help="uniform and nonuniform query profiles at 1 and 5 shots")
    _add_episode_flags(scen, with_spec=False)
    scen.set_defaults(handler=cmd_scenarios)
    return parser


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    weights = LossWeights(
        w_ce=args.w_ce,
        w_recon=args.w_recon,
        w_lik=args.w_lik,
        w_tp=args.w_tp,
        tp_form=TP_FORM_FLAGS[args.tp_form],
        reduction=args.reduction,
    )
    return SolverConfig(
        lr=args.lr,
        momentum=args.momentum,
        max_iters=args.iters,
        tol=args.tol,
        tau=args.tau,
        sigma_enc=args.sigma_enc,
        L=args.mc_samples,
        weights=weights,
        d_hidden=args.d_hidden,
        psi_scaling=args.psi_scaling,
    )


def _episode_spec(args: argparse.Namespace) -> EpisodeSpec:
    query = args.query if args.query is not None else [15] * args.way
    return EpisodeSpec(args.way, args.shot, tuple(query), args.preprocess)


def _scenario_label(spec: EpisodeSpec) -> str:
    return "uniform" if len(set(spec.query_counts)) == 1 else "nonuniform"


def _resolved(args: argparse.Namespace) -> Dict:
    out = {}
    for key, value in vars(args).items():
        if key == "handler":
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def write_manifest(path: Path, args: argparse.Namespace, argv: Sequence[str], dataset_path, dataset_hash) -> None:
    manifest = {
        'command': args.command,
        'argv': list(argv),
        'config': _resolved(args),
        'dataset': {'path': str(dataset_path), 'sha256': dataset_hash},
        'tool_version': __version__,
        'numpy_version': np.__version__,
        'seed': args.seed,
        'timestamp': datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_episodes_csv(path: Path, arms: Sequence[Arm]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EPISODES_HEADER)
        for scenario, config, summary in arms:
            for r in summary.records:
                writer.writerow([r.episode_index, scenario, config, repr(r.accuracy), r.iters_run, repr(r.final_total_loss)])


def write_curves_csv(path: Path, arms: Sequence[Arm]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["arm", "episode_index", "running_mean"])
        for scenario, config, summary in arms:
            for index, value in enumerate(summary.curve):
                writer.writerow([_arm_name(scenario, config), index, repr(value)])


def _arm_name(scenario: str, config: str) -> str:
    return f"{scenario}:{config}"


def build_summary(command: str, dataset_hash: str, reference: EvalSummary, arms: Sequence[Arm]) -> Dict:
    """summary.json content; top-level accuracy fields describe the reference arm."""
    summary = {
        'command': command,
        'dataset_hash': dataset_hash,
        'spec': reference.config_echo['spec'],
        'solver': reference.config_echo['solver'],
        'episodes': reference.episodes,
        'mean_accuracy': reference.mean,
        'ci95': reference.ci95,
    }
    if len(arms) > 1:
        summary['arms'] = {
            _arm_name(scenario, config): {
                'spec': s.config_echo['spec'],
                'solver': s.config_echo['solver'],
                'method': s.config_echo['method'],
                'episodes': s.episodes,
                'mean_accuracy': s.mean,
                'ci95': s.ci95,
                'marginal_entropy': s.marginal_entropy,
                'wall_time_ms': s.wall_time_ms,
            }
            for scenario, config, s in arms
        }
    summary['curves'] = {_arm_name(scenario, config): s.curve for scenario, config, s in arms}
    assert set(summary) <= set(SUMMARY_KEYS)
    return summary


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(TPVAEConfig.OUTPUT_DIR) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_outputs(args, argv, dataset_hash, reference: EvalSummary, arms: Sequence[Arm]) -> Path:
    out = _out_dir(args)
    write_episodes_csv(out / "episodes.csv", arms)
    write_curves_csv(out / "curves.csv", arms)
    summary = build_summary(args.command, dataset_hash, reference, arms)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_manifest(out / "manifest.json", args, argv, args.data, dataset_hash)
    logger.info(f"Results written to {out}")
    return out


def _load(args: argparse.Namespace):
    ds = load_dataset(args.data, args.data_format)
    return ds, file_sha256(args.data)


def cmd_gen_synth(args: argparse.Namespace, argv: Sequence[str]) -> int:
    spec = SynthSpec(args.classes, args.dim, args.per_class, args.sep, args.seed)
    ds = gen_synthetic(spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out, args.format)
    digest = file_sha256(args.out)
    write_manifest(Path(f"{args.out}.manifest.json"), args, argv, args.out, digest)
    print(digest)
    return 0


def cmd_run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    ds, digest = _load(args)
    cfg, spec = _solver_config(args), _episode_spec(args)
    scenario = _scenario_label(spec)
    if args.with_baseline:
        base, full, gap = compare_baseline(ds, spec, cfg, args.episodes, args.seed, args.workers)
        arms = [(scenario, "tpvae", full), (scenario, "baseline", base)]
    else:
        full = evaluate(ds, spec, cfg, args.episodes, args.seed, args.workers)
        arms = [(scenario, "tpvae", full)]
    logger.info(f"run: {full.mean:.4f} +- {full.ci95:.4f}")
    _write_outputs(args, argv, digest, full, arms)
    return 0


def cmd_ablate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    ds, digest = _load(args)
    cfg, spec = _solver_config(args), _episode_spec(args)
    table = ablate(ds, spec, cfg, args.episodes, args.seed, args.workers)
    scenario = _scenario_label(spec)
    arms = [(scenario, name, summary) for name, summary in table.rows]
    for name, summary in table.rows:
        logger.info(f"{name}: {summary.mean:.4f} +- {summary.ci95:.4f}")
    _write_outputs(args, argv, digest, table.as_dict()["ce+tp+re"], arms)
    return 0


def cmd_sweep_tau(args: argparse.Namespace, argv: Sequence[str]) -> int:
    ds, digest = _load(args)
    cfg, spec = _solver_config(args), _episode_spec(args)
    rows = sweep_tau(ds, spec, cfg, args.taus, args.episodes, args.seed, args.workers)
    scenario = _scenario_label(spec)
    arms = [(scenario, f"tau={tau:g}", summary) for tau, summary in rows]
    reference = next((s for tau, s in rows if tau == cfg.tau), rows[0][1])
    out = _write_outputs(args, argv, digest, reference, arms)
    with open(out / "tau_sweep.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["tau", "mean", "ci95"])
        for tau, summary in rows:
            writer.writerow([repr(tau), repr(summary.mean), repr(summary.ci95)])
    return 0


def cmd_scenarios(args: argparse.Namespace, argv: Sequence[str]) -> int:
    ds, digest = _load(args)
    cfg = _solver_config(args)
    rows = scenario_battery(ds, cfg, args.episodes, args.seed, args.workers, preprocess=args.preprocess)
    arms = [(name, "tpvae", summary) for name, summary in rows]
    _write_outputs(args, argv, digest, rows[0][1], arms)
    return 0


def _validate(args: argparse.Namespace) -> None:
    """Build every config the command needs so bad combinations fail as usage errors."""
    if args.command == "gen-synth":
        SynthSpec(args.classes, args.dim, args.per_class, args.sep, args.seed)
        return
    _solver_config(args)
    if hasattr(args, "way"):
        _episode_spec(args)


def configure_logging() -> None:
    settings = TPVAEConfig.get_logging_config()
    logging.basicConfig(level=settings['level'], format=settings['format'])


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    try:
        _validate(args)
    except ValueError as e:
        parser.error(str(e))
    try:
        return args.handler(args, argv)
    except (TPVAEError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
