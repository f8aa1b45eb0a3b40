"""CLI for molview."""

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Callable

from loguru import logger

from molview import __version__
from molview.bench import GRADCHECK_TOLERANCE, GRIDS, ablate, gradcheck_loss, mi_bench, transfer_report
from molview.checkpoint import load_checkpoint, save_checkpoint
from molview.config import read_config_file
from molview.errors import ConfigError, MolviewError
from molview.metrics import EvalReport, config_digest
from molview.molio import load_dataset, serialize_jsonl
from molview.objectives import VARIANTS
from molview.synth import KINDS, SynthSpec, gen_synthetic
from molview.trainer import PROBE_TASKS, ProbeConfig, TrainConfig, finetune_probe, pretrain, random_model, restore_model

LOSS_CHOICES = ("infonce", "ebm_nce", "vrr", "rr", "combined", "none")
LOG_FORMAT = "{time:HH:mm:ss} | {level} | {message}"


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors print a single line and exit with status 2."""

    def error(self, message: str):
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(2)


def configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO", format=LOG_FORMAT)


# Configuration assembly


def train_config(args: argparse.Namespace, stored: dict | None = None) -> TrainConfig:
    """Config file (or a checkpoint's stored config) with command-line overrides applied."""
    if args.config:
        config = TrainConfig.from_dict(read_config_file(args.config))
    else:
        config = TrainConfig.from_dict(stored)
    loss = config.loss
    if getattr(args, "loss", None):
        loss = loss.select(args.loss)
    if getattr(args, "variant", None):
        loss = dataclasses.replace(loss, variant=args.variant)
    overrides = {"loss": loss}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return dataclasses.replace(config, **overrides)


def probe_config(args: argparse.Namespace, mode: str) -> ProbeConfig:
    return ProbeConfig(mode=mode, task=args.task, target=args.target, seed=args.seed or 0)


def output_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(report: EvalReport, out: Path) -> Path:
    path = out / "report.json"
    report.write(path)
    return path


# Subcommands


def cmd_synth(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    spec = SynthSpec(
        kind=args.kind,
        count=args.count,
        min_atoms=args.min_atoms,
        max_atoms=args.max_atoms,
        noise=args.noise,
        seed=args.seed or 0,
    )
    dataset = gen_synthetic(spec)
    path = output_dir(args) / "dataset.jsonl"
    serialize_jsonl(dataset.records, path, header=dataset.header)
    print(f"Wrote {len(dataset.records)} molecules -> {path}")
    return 0


def cmd_pretrain(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    resume = load_checkpoint(args.resume) if args.resume else None
    config = train_config(args, resume.config if resume else None)
    if args.dataset:
        records = load_dataset(args.dataset, strict=not args.lenient).records
    else:
        # no dataset given: train on the default synthetic set for this seed
        records = gen_synthetic(SynthSpec(seed=config.seed)).records
    out = output_dir(args)

    print(f"Pretraining on {len(records)} molecules -> {out}")
    result = pretrain(records, config, resume=resume, metrics_path=out / "metrics.jsonl",
                      progress_callback=progress)
    save_checkpoint(out / "model.gmvp", result.checkpoint)

    losses = result.metrics.losses()
    print("\nTrained:")
    print(f"  {result.checkpoint.step} steps")
    if losses:
        print(f"  final loss {losses[-1]:.6f}")
    print(f"  checkpoint {out / 'model.gmvp'}")
    return 0


def _load_model(args: argparse.Namespace):
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint)
        return restore_model(checkpoint), checkpoint.config
    config = train_config(args)
    return random_model(config), config.to_dict()


def _probe(args: argparse.Namespace, progress: Callable[[str], None], mode: str) -> int:
    records = load_dataset(args.dataset, strict=not args.lenient).records
    model, model_config = _load_model(args)
    probe = probe_config(args, mode)
    result = finetune_probe(model, records, probe, progress_callback=progress)
    report = EvalReport(
        task=f"{mode}/{probe.task}",
        metric=result.metric,
        seeds=[result.value],
        config_digest=config_digest({"model": model_config, "probe": probe.to_dict()}),
        extras={**result.extras, "seed_ids": [probe.seed]},
    )
    path = write_report(report, output_dir(args))
    print(f"{result.metric} = {result.value:.4f} -> {path}")
    return 0


def cmd_finetune(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    return _probe(args, progress, args.mode)


def cmd_probe(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    return _probe(args, progress, "frozen")


def cmd_gradcheck(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    error = gradcheck_loss(args.loss, args.variant or "plain", seed=args.seed or 0)
    print(f"max relative error {error:.3e}")
    return 0 if error < GRADCHECK_TOLERANCE else 1


def cmd_mi_bench(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    seeds = args.seeds if args.seeds else [args.seed or 0]
    report = mi_bench(args.rho, args.dim, args.batch_size, args.steps, seeds, progress_callback=progress)
    path = write_report(report, output_dir(args))
    print(f"MI estimate {report.value:.4f} nats (true {report.extras['true_mi']:.4f}) -> {path}")
    return 0


def cmd_transfer(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    records = load_dataset(args.dataset, strict=not args.lenient).records
    config = train_config(args)
    seeds = args.seeds if args.seeds else [config.seed]
    report = transfer_report(records, config, probe_config(args, "frozen"), seeds, progress_callback=progress)
    path = write_report(report, output_dir(args))
    print(f"{report.metric} = {report.value:.4f} -> {path}")
    return 0


def cmd_ablate(args: argparse.Namespace, progress: Callable[[str], None]) -> int:
    records = load_dataset(args.dataset, strict=not args.lenient).records
    config = train_config(args)
    report = ablate(records, config, probe_config(args, "frozen"), args.grid, progress_callback=progress)
    path = output_dir(args) / "report.json"
    report.write(path)
    for cell in report.cells:
        print(f"  {cell['cell']:<14} {cell['value']:.4f}")
    print(f"-> {path}")
    return 0


# Parser


def _add_common(parser: argparse.ArgumentParser, out_default: str | None) -> None:
    parser.add_argument("--seed", type=int, default=None, help="Seed for all randomness")
    if out_default:
        parser.add_argument("--out", "-o", type=Path, default=Path(out_default), help="Output directory")
    parser.add_argument("--verbose", "-v", action="store_true", help="Show progress")


def _add_dataset(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--dataset", "-d", type=Path, required=required, help="JSONL dataset")
    parser.add_argument("--lenient", action="store_true", help="Ignore unknown keys in records")


def _add_training(parser: argparse.ArgumentParser, default_loss: str | None = None) -> None:
    parser.add_argument("--config", "-c", type=Path, help="JSON training config")
    parser.add_argument("--loss", choices=LOSS_CHOICES, default=default_loss, help="Objective selection")
    parser.add_argument("--variant", choices=VARIANTS, help="2D-only objective variant")


def _add_probe(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--target", help="Label name (default: the record's primary label)")
    parser.add_argument("--task", choices=PROBE_TASKS, default="binary", help="Downstream task type")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="molview",
        description="Multi-view (2D graph / 3D conformer) molecular pretraining.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic labeled dataset")
    _add_common(p, "data")
    p.add_argument("--kind", choices=KINDS, default="mixed", help="Molecule topology")
    p.add_argument("--count", type=int, default=100, help="Number of molecules")
    p.add_argument("--min-atoms", type=int, default=6, help="Smallest molecule size")
    p.add_argument("--max-atoms", type=int, default=16, help="Largest molecule size")
    p.add_argument("--noise", type=float, default=0.05, help="Coordinate noise in Angstrom")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("pretrain", help="Pretrain both encoders on paired views")
    _add_common(p, "run")
    _add_dataset(p, required=False)
    _add_training(p)
    p.add_argument("--resume", type=Path, help="Checkpoint to continue from")
    p.set_defaults(handler=cmd_pretrain)

    for name, help_text in (("finetune", "Train a head (and encoder) on a labeled task"),
                            ("probe", "Frozen linear probe on a labeled task")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, "eval")
        _add_dataset(p)
        _add_training(p)
        _add_probe(p)
        p.add_argument("--checkpoint", type=Path, help="Pretrained model (default: random init)")
        if name == "finetune":
            p.add_argument("--mode", choices=("frozen", "full"), default="full", help="What gets trained")
            p.set_defaults(handler=cmd_finetune)
        else:
            p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("gradcheck", help="Finite-difference check of a loss gradient")
    _add_common(p, None)
    p.add_argument("--loss", choices=LOSS_CHOICES, default="combined", help="Objective selection")
    p.add_argument("--variant", choices=VARIANTS, help="2D-only objective variant")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("mi-bench", help="InfoNCE MI estimate on correlated Gaussians")
    _add_common(p, "eval")
    p.add_argument("--rho", type=float, default=0.8, help="Correlation coefficient")
    p.add_argument("--dim", type=int, default=1, help="Dimension of x and y")
    p.add_argument("--batch-size", type=int, default=128, help="Batch size K")
    p.add_argument("--steps", type=int, default=2000, help="Training steps")
    p.add_argument("--seeds", type=int, nargs="+", help="Seeds to run (default: --seed)")
    p.set_defaults(handler=cmd_mi_bench)

    p = sub.add_parser("transfer", help="Probe pretrained vs random-init encoders")
    _add_common(p, "eval")
    _add_dataset(p)
    _add_training(p)
    _add_probe(p)
    p.add_argument("--seeds", type=int, nargs="+", help="Seeds to run (default: --seed)")
    p.set_defaults(handler=cmd_transfer)

    p = sub.add_parser("ablate", help="Pretrain + probe over an ablation grid")
    _add_common(p, "eval")
    _add_dataset(p)
    _add_training(p)
    _add_probe(p)
    p.add_argument("--grid", choices=GRIDS, default="objective", help="Which study to run")
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    def progress(msg: str):
        if args.verbose:
            print(msg)

    try:
        return args.handler(args, progress)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except (MolviewError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
