"""
prunekit
Learnable structured pruning for few-shot voice cloning

Command-line entry point: pretrain, clone, compact, report
"""

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

# Configuration (thread limits must be in place before numpy loads)
from config.settings import RunConfig, settings

settings.apply_thread_limits()

from loguru import logger  # noqa: E402

# Components
from components.speech_model import SpeechModel  # noqa: E402

# Services
from services.checkpoint_service import Checkpoint, CheckpointService  # noqa: E402
from services.compaction_service import compact  # noqa: E402
from services.corpus_service import corpus_summary, make_clone_task, make_synthetic_corpus  # noqa: E402
from services.pipeline_graph import pipeline_spec, run_pipeline  # noqa: E402
from services.prune_plan import build_plan  # noqa: E402
from services.report_service import RecordWriter, ReportService, StageReport, dumps_record  # noqa: E402
from services.training_service import pretrain  # noqa: E402

# Utilities
from utils.errors import PruneKitError, UsageError  # noqa: E402
from utils.helpers import format_duration, format_number  # noqa: E402
from utils.logger import configure_logging  # noqa: E402
from utils.validators import validate_seed  # noqa: E402


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors go through the prunekit exit codes"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def load_run_config(path: Optional[str]) -> RunConfig:
    """Run config from a file, or the defaults when no file is given"""
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)


def check_seeds(seeds: List[int]) -> None:
    """Reject command-line seeds numpy cannot use"""
    for seed in seeds:
        result = validate_seed(seed, "--seed")
        if not result:
            raise UsageError(result.message)


def run_directory(out: Optional[str], config: RunConfig) -> Path:
    """--out wins; otherwise PATHS_OUT_DIR, resolved under the runs root when relative"""
    if out:
        return Path(out)
    return Path(settings.runs_dir) / config.paths.out_dir


# ============================================================================
# Commands
# ============================================================================

def cmd_pretrain(args: argparse.Namespace) -> int:
    """Train a multi-speaker base model on the synthetic corpus"""
    config = load_run_config(args.config)
    if args.seed is not None:
        check_seeds([args.seed])
        config.seed = args.seed
    out_dir = run_directory(args.out, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.env").write_text(config.to_text(), encoding="utf-8")

    corpus = make_synthetic_corpus(
        config.seed, config.model.n_speakers, config.corpus.samples_per_speaker,
        config.model.vocab_size, config.model.n_mel, config.corpus
    )
    logger.info(f"Synthetic corpus: {corpus_summary(corpus)}")
    model = SpeechModel.initialize(config.model, config.seed)
    plan = build_plan(config.model, config.gates)
    params_original = model.parameter_count()
    logger.info(f"Base model: {format_number(params_original)} parameters")

    writer = RecordWriter(str(out_dir / "pretrain.jsonl"))
    result, initial = pretrain(
        model, plan, corpus.items, corpus.eval_items, config.training, config.gates,
        config.seed, args.steps, on_record=writer
    )
    breakdown = result.breakdown
    writer(StageReport(
        pipeline="pretrain",
        seed=config.seed,
        stage="pretrain",
        steps=result.steps,
        converged=result.converged,
        l_tts=breakdown.l_tts if breakdown else 0.0,
        l_reg=0.0,
        lambda_=float(plan.lambda_),
        l_total=breakdown.l_total if breakdown else 0.0,
        density=0.0,
        eval_loss=result.eval_loss,
        sparsity_pct=0.0,
        ratio=1.0,
        polarization=None,
        params_before=plan.lambda_,
        params_after=plan.lambda_,
        maskable=plan.maskable_count(),
    ).to_record())
    writer({"type": "pretrain", "seed": config.seed, "initial_eval_loss": initial, "final_eval_loss": result.eval_loss})

    checkpoint = Checkpoint(model, plan, config.gates, result.steps, params_original, corpus_seed=config.seed)
    CheckpointService().save(checkpoint, str(out_dir / config.paths.checkpoint_name))
    print(f"pretrain: eval loss {initial:.5f} -> {result.eval_loss:.5f} after {result.steps} steps")
    return 0


def cmd_clone(args: argparse.Namespace) -> int:
    """Clone one held-out speaker per seed with a prune/fine-tune pipeline"""
    config = load_run_config(args.config)
    checkpoints = CheckpointService()
    base = checkpoints.load(args.checkpoint)
    gates = config.gates if args.config else base.gate_config
    kind = args.pipeline or config.pipeline.kind
    spec = pipeline_spec(kind, config.training, args.steps)
    out_dir = run_directory(args.out, config)
    seeds = args.seed if args.seed else [config.seed]
    check_seeds(seeds)

    model_config = base.model.config
    corpus_seed = base.corpus_seed if base.corpus_seed is not None else config.seed
    corpus = None
    if any(stage.data == "pretrain" for stage in spec.stages):
        corpus = make_synthetic_corpus(
            corpus_seed, model_config.n_speakers, config.corpus.samples_per_speaker,
            model_config.vocab_size, model_config.n_mel, config.corpus
        )

    for seed in seeds:
        writer = RecordWriter(str(out_dir / f"{kind}-seed{seed}.jsonl"))
        task = make_clone_task(corpus_seed, seed, model_config.vocab_size, model_config.n_mel, config.corpus)
        result = run_pipeline(spec, base.model, task, seed, config.training, gates, corpus, on_record=writer)

        small, small_plan, report = compact(
            result.model, result.plan, gates, base.original_count, config.pipeline.n_probe, seed
        )
        writer({**report.to_record(), "pipeline": kind, "seed": seed})
        checkpoints.save(
            Checkpoint(small, small_plan, gates, base.step + result.steps, base.original_count, corpus_seed),
            str(out_dir / f"{kind}-seed{seed}.ckpt")
        )
        for stage in result.reports:
            print(
                f"{kind} seed {seed} [{stage.stage}]: sparsity {stage.sparsity_pct:.2f}% "
                f"ratio {stage.ratio:.3f} eval loss {stage.eval_loss:.5f}"
            )
    return 0


def cmd_compact(args: argparse.Namespace) -> int:
    """Physically remove the pruned structure of a checkpoint"""
    checkpoints = CheckpointService()
    source = Path(args.checkpoint)
    checkpoint = checkpoints.load(str(source))
    small, small_plan, report = compact(
        checkpoint.model, checkpoint.plan, checkpoint.gate_config, checkpoint.original_count
    )
    target = Path(args.out) if args.out else source.with_name(f"{source.stem}.compact.ckpt")
    checkpoints.save(
        Checkpoint(small, small_plan, checkpoint.gate_config, checkpoint.step,
                   checkpoint.original_count, checkpoint.corpus_seed),
        str(target)
    )
    target.with_suffix(".json").write_text(dumps_record(report.to_record()) + "\n", encoding="utf-8")
    print(
        f"compact: {report.params_before} -> {report.params_after} parameters, "
        f"sparsity {report.sparsity_pct:.2f}%, ratio {report.ratio:.3f}, "
        f"max residual {report.max_residual:.2e}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Consolidate every record file of a run directory into one table"""
    service = ReportService()
    table = service.build_report(args.run_dir)
    table.to_csv(Path(args.run_dir) / "report.csv", float_format="%.6f")
    print(service.format_table(table))
    return 0


# ============================================================================
# Entry point
# ============================================================================

def build_parser() -> CliParser:
    parser = CliParser(prog="prunekit", description="Structured pruning for few-shot voice cloning")
    parser.add_argument("--log-level", default=None, help="Override PRUNEKIT_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("pretrain", help="Pretrain the multi-speaker base model")
    p.add_argument("--config", help="Run config file (KEY=value)")
    p.add_argument("--seed", type=int, help="Override SEED")
    p.add_argument("--steps", type=int, help="Override TRAINING_PRETRAIN_STEPS")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(handler=cmd_pretrain)

    p = commands.add_parser("clone", help="Run a prune/fine-tune pipeline on clone tasks")
    p.add_argument("checkpoint", help="Base checkpoint")
    p.add_argument("--pipeline", help="joint, ft_then_prune, prune_then_ft or prune_pretrain_then_ft")
    p.add_argument("--seed", type=int, nargs="+", help="One clone task per seed")
    p.add_argument("--config", help="Run config file (KEY=value)")
    p.add_argument("--steps", type=int, help="Per-stage step cap")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(handler=cmd_clone)

    p = commands.add_parser("compact", help="Binarize gates and shrink a checkpoint")
    p.add_argument("checkpoint", help="Checkpoint to compact")
    p.add_argument("--out", help="Destination checkpoint")
    p.set_defaults(handler=cmd_compact)

    p = commands.add_parser("report", help="Consolidated table of a run directory")
    p.add_argument("run_dir", help="Directory holding *.jsonl record files")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code"""
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or settings.log_level, settings.log_file)
        code = args.handler(args)
    except PruneKitError as e:
        logger.error(str(e))
        return e.exit_code
    logger.debug(f"{args.command} finished in {format_duration(time.perf_counter() - started)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
