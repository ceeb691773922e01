"""RARARL Lab command-line entry point.

Usage:
    python -m src.rararl.main train  [--config config/speedway.toml] [--seed N] [--out DIR] [--variant NAME]
    python -m src.rararl.main eval   --checkpoint PATH [--adversary PATH] --regime {none,random,adversarial}
                                     [--episodes N] --csv PATH
    python -m src.rararl.main eval   --model NAME=PATH[,PATH...] [--model ...] [--regimes none,random,adversarial]
                                     [--episodes N] --csv PATH
    python -m src.rararl.main credit --checkpoint PATH [--episodes N] --csv PATH
    python -m src.rararl.main plot   --episodes-csv PATH [PATH ...] --out PNG

Exit codes: 0 success, 1 configuration or checkpoint error, 2 usage error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..utils.config import (
    RunConfig,
    apply_overrides,
    config_digest,
    load_run_config,
    load_settings,
)
from ..utils.formatters import (
    format_comparison_table,
    format_duration,
    format_error_message,
    format_eval_summary,
)
from .checkpoint import Checkpoint, load_checkpoint, load_checkpoints, save_checkpoint
from .credit import credit_episodes, write_credit_csv
from .errors import CheckpointError, ConfigError
from .evaluation import DEFAULT_EPISODES, Regime, compare_models, evaluate_checkpoint
from .plot import plot_episode_files
from .speedway import TrackConfig
from .trainer import TrainResult, Variant, train

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stdout)],
    )


def _resolve_seed(cli_seed: Optional[int], settings_seed: Optional[int], config_seed: int) -> int:
    """--seed, then RARARL_SEED, then [run].seed."""
    if cli_seed is not None:
        return cli_seed
    if settings_seed is not None:
        return settings_seed
    return config_seed


def _track_for(run_cfg: Optional[RunConfig], ckpt: Optional[Checkpoint]) -> TrackConfig:
    """Track from --config, else the one stored with the checkpoint, else the default oval."""
    if run_cfg is not None:
        return run_cfg.track
    if ckpt is not None and ckpt.config and "track" in ckpt.config:
        return TrackConfig(**ckpt.config["track"])
    return TrackConfig()


def parse_model_spec(spec: str) -> Tuple[str, List[str]]:
    """'name=a.json,b.json' -> ('name', ['a.json', 'b.json'])"""
    name, sep, paths = spec.partition("=")
    if not sep or not name.strip() or not paths.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=PATH[,PATH...], got {spec!r}")
    return name.strip(), [p.strip() for p in paths.split(",") if p.strip()]


def _regime_list(text: str) -> List[Regime]:
    try:
        return [Regime(r.strip()) for r in text.split(",") if r.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    """Train one variant and write checkpoints, metrics.csv and episodes.csv."""
    settings = load_settings()
    cfg = load_run_config(args.config or settings.run_config)
    seed = _resolve_seed(args.seed, settings.seed, cfg.run.seed)
    cfg = apply_overrides(cfg, seed=seed, variant=args.variant, total_steps=args.steps)

    train_cfg = cfg.training()
    if args.out:
        out_dir = Path(args.out)
    else:
        # RARARL_OUTPUT_DIR, then [run].output_dir
        root = Path(settings.output_dir or cfg.run.output_dir)
        out_dir = root / f"{cfg.run.name}-{train_cfg.variant.value}-s{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    dump = cfg.model_dump(mode="json")
    (out_dir / "config.json").write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Run directory: {out_dir} (config digest {digest[:12]})")

    def on_checkpoint(t: int, result: TrainResult) -> None:
        save_checkpoint(Checkpoint.from_training(result, digest, dump), out_dir / f"ckpt_{t}.json")

    started = time.monotonic()
    result = train(train_cfg, cfg.track, seed=seed, on_checkpoint=on_checkpoint)
    save_checkpoint(Checkpoint.from_training(result, digest, dump), out_dir / "final.json")
    result.metrics.write_csv(out_dir / "metrics.csv")
    result.metrics.write_episodes_csv(out_dir / "episodes.csv")
    logger.info(
        f"Done in {format_duration(time.monotonic() - started)}: "
        f"{result.global_step} steps, {len(result.metrics.episodes)} episodes"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Single-checkpoint report, or the model x regime comparison table with --model."""
    settings = load_settings()
    seed = _resolve_seed(args.seed, settings.seed, 0)
    run_cfg = load_run_config(args.config) if args.config else None
    digest = config_digest(run_cfg) if run_cfg is not None else None
    episodes = args.episodes
    if episodes is None:
        episodes = run_cfg.eval.episodes if run_cfg is not None else DEFAULT_EPISODES

    adversary = load_checkpoint(args.adversary, digest) if args.adversary else None

    if args.model:
        models = [(name, load_checkpoints(paths, digest)) for name, paths in args.model]
        track = _track_for(run_cfg, models[0][1][0])
        regimes = args.regimes
        if regimes is None:
            regimes = [Regime(r) for r in run_cfg.eval.regimes] if run_cfg is not None else list(Regime)
        if Regime.ADVERSARIAL in regimes and adversary is None:
            missing = [name for name, ckpts in models if not all(c.has_adversary for c in ckpts)]
            if missing:
                raise CheckpointError(
                    f"adversarial regime needs --adversary or an adversary in every checkpoint (missing: {', '.join(missing)})"
                )
        table = compare_models(models, regimes, episodes, track, seed, adversary)
        table.write_csv(args.csv)
        logger.info("Comparison (average best catastrophe reward, higher is better):\n" + format_comparison_table(table))
        return 0

    if args.regime is None:
        raise ConfigError("--regime is required with --checkpoint")
    regime = Regime(args.regime)
    ckpt = load_checkpoint(args.checkpoint, digest)
    if regime is Regime.ADVERSARIAL and adversary is None and not ckpt.has_adversary:
        print(format_error_message("--regime adversarial needs --adversary PATH"), file=sys.stderr)
        return 2
    track = _track_for(run_cfg, ckpt)
    report = evaluate_checkpoint(ckpt, regime, episodes, track, np.random.default_rng(seed), adversary)
    report.write_csv(args.csv)
    logger.info(format_eval_summary(report, Path(args.checkpoint).name))
    return 0


def cmd_credit(args: argparse.Namespace) -> int:
    """Roll out greedy two-agent episodes and write the credit decomposition."""
    settings = load_settings()
    seed = _resolve_seed(args.seed, settings.seed, 0)
    run_cfg = load_run_config(args.config) if args.config else None
    ckpt = load_checkpoint(args.checkpoint, config_digest(run_cfg) if run_cfg is not None else None)
    ckpt.require_adversary()
    track = _track_for(run_cfg, ckpt)
    traces = credit_episodes(ckpt, track, args.episodes, seed)
    steps_path, totals_path = write_credit_csv(traces, args.csv)
    logger.info(f"Wrote {len(traces)} credit trace(s) to {steps_path} and {totals_path}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    """Three-panel per-episode curves from one or more episodes.csv files."""
    plot_episode_files(args.episodes_csv, args.out, args.window)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rararl",
        description="Risk-averse adversarial ensemble Q-learning on a toy speedway.",
    )
    parser.add_argument("--log-level", default=None, help="override RARARL_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", default=None, help="run config (TOML), default RARARL_RUN_CONFIG")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=None)
    p.add_argument("--steps", type=int, default=None, help="override train.total_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints under perturbation regimes")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", help="protagonist checkpoint")
    source.add_argument("--model", action="append", type=parse_model_spec, help="NAME=PATH[,PATH...] (repeatable)")
    p.add_argument("--adversary", default=None, help="checkpoint supplying the adversary")
    p.add_argument("--regime", choices=[r.value for r in Regime], default=None)
    p.add_argument("--regimes", type=_regime_list, default=None, help="comma list for --model mode, default [eval].regimes")
    p.add_argument("--episodes", type=int, default=None, help="default [eval].episodes, else 10")
    p.add_argument("--csv", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="take the track and [eval] defaults from this run config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("credit", help="protagonist / adversary credit decomposition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--csv", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_credit)

    p = sub.add_parser("plot", help="render episodes.csv curves to PNG")
    p.add_argument("--episodes-csv", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=20)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if (getattr(args, "episodes", None) or 0) < 0:
        parser.error("--episodes must be >= 0")

    try:
        settings = load_settings()
    except ValueError as e:
        print(format_error_message(f"invalid environment settings: {e}"), file=sys.stderr)
        return 1
    _setup_logging(args.log_level or settings.log_level)

    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as e:
        logger.error(f"{args.command} failed: {str(e).splitlines()[0]}")
        print(format_error_message(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
