"""
Command-Line Commands
One subcommand per stage plus `run` (the whole experiment), `project`
(a single projection on stored images), `report` and `schema`.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import torch
from pydantic import ValidationError

from ganinvert.analysis.theorem_check import validate_theorem
from ganinvert.cli.pipeline import resolve_artifact_dir, run_experiment, run_stage
from ganinvert.cli.report import build_report
from ganinvert.config.experiment_config import ExperimentConfig, StageName, experiment_schema, load_experiment
from ganinvert.defense.defense_eval import purify
from ganinvert.middleware.error_handler import ConfigError, DatasetError, config_error_from_validation
from ganinvert.models.schemas import (
    AttackFamily,
    AttackSpec,
    DefenseMode,
    InitMode,
    InverterTrainConfig,
    ProjectionConfig,
    TheoremConfig,
)
from ganinvert.storage.archive import read_archive, write_archive
from ganinvert.storage.artifacts import ArtifactStore, dumps_deterministic
from ganinvert.storage.checkpoint import load_checkpoint, save_checkpoint
from ganinvert.storage.datasets import load_mnist_dir
from ganinvert.training.inverter_training import train_inverter
from ganinvert.utils.helpers import atomic_write_text, ensure_directory, set_global_seed

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], int]


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    return load_experiment(args.config, seed=getattr(args, "seed", None))


def _load_model_config(path: Path, model):
    try:
        return model.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except ValidationError as e:
        raise config_error_from_validation(e, source=str(path)) from e


# ==================== STAGE COMMANDS ====================

def cmd_run(args: argparse.Namespace) -> int:
    manifest = run_experiment(_experiment(args), args.artifact_dir)
    logger.info(f"Run finished: {len(manifest.stages)} stage record(s)")
    return 0


def _stage_command(stage: StageName) -> Handler:
    def handler(args: argparse.Namespace) -> int:
        run_stage(_experiment(args), stage, args.artifact_dir)
        return 0
    handler.__name__ = f"cmd_{stage.name.lower()}"
    return handler


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    if args.family is not None:
        spec = AttackSpec(family=args.family, eps=args.eps, seed=cfg.seed)
        cfg = cfg.model_copy(update={"attack": cfg.attack.model_copy(update={"specs": [spec]})})
    run_stage(cfg, StageName.ATTACK, args.artifact_dir)
    return 0


def cmd_train_inverter(args: argparse.Namespace) -> int:
    """Experiment stage, or a standalone run on a generator checkpoint when --generator is given."""
    if args.generator is None:
        run_stage(_experiment(args), StageName.TRAIN_INVERTER, args.artifact_dir)
        return 0

    cfg = _load_model_config(args.config, InverterTrainConfig)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    set_global_seed(cfg.seed)
    out = ensure_directory(args.out)
    I, D, log = train_inverter(load_checkpoint(args.generator), cfg)
    save_checkpoint(I, out / "inverter.ckpt")
    save_checkpoint(D, out / "inversion_discriminator.ckpt")
    atomic_write_text(out / "inverter_log.json", dumps_deterministic(log))
    return 0


def cmd_validate_theorem(args: argparse.Namespace) -> int:
    """Experiment stage, or a standalone check of a generator / inverter pair."""
    if args.generator is None:
        if args.config is None:
            raise ConfigError("validate-theorem needs --config or --generator/--inverter")
        run_stage(_experiment(args), StageName.VALIDATE_THEOREM, args.artifact_dir)
        return 0

    if args.inverter is None:
        raise ConfigError("--generator needs --inverter")
    updates = {k: v for k, v in (("eps_prime", args.eps_prime), ("m", args.m), ("n_train", args.n),
                                 ("seed", args.seed)) if v is not None}
    cfg = TheoremConfig(**updates)
    reports = validate_theorem(load_checkpoint(args.inverter), load_checkpoint(args.generator), cfg)
    text = dumps_deterministic([r.model_dump(mode="json") for r in reports])
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ==================== PROJECTION ====================

def _input_images(args: argparse.Namespace) -> torch.Tensor:
    if args.input is not None:
        arrays, _ = read_archive(args.input)
        key = "x_adv" if "x_adv" in arrays else "x"
        if key not in arrays:
            raise DatasetError(f"{args.input} holds neither 'x_adv' nor 'x'")
        images = torch.from_numpy(arrays[key])
    elif args.mnist_dir is not None:
        images = load_mnist_dir(args.mnist_dir, split=args.split, limit=args.limit).to_tensor()
    else:
        raise ConfigError("project needs --input or --mnist-dir")
    return images[:args.limit] if args.limit else images


def cmd_project(args: argparse.Namespace) -> int:
    G = load_checkpoint(args.generator)
    I = load_checkpoint(args.inverter) if args.inverter else None
    mode = DefenseMode(args.mode)
    if mode == DefenseMode.NONE:
        raise ConfigError("project needs --mode direct or encoder")
    cfg = ProjectionConfig(
        steps=args.steps,
        alpha=args.alpha,
        restarts=args.restarts,
        init_mode=InitMode.ENCODER if mode == DefenseMode.ENCODER else InitMode.RANDOM,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    x = _input_images(args).to(G.dtype)
    result = purify(G, I, x, cfg, mode)
    write_archive(args.out, {
        "x": x,
        "z": result.z,
        "x_proj": result.x_proj,
        "trajectory": result.trajectory,
        "chain_index": result.chain_index,
        "distance": result.distance,
    }, {"kind": "projection", "mode": mode.value, "config": cfg.model_dump(mode="json"),
        "effective_iterations": result.effective_iterations})
    logger.info(f"Projected {x.shape[0]} images ({mode.value}, E={result.effective_iterations}) to {args.out}")
    return 0


# ==================== REPORT / SCHEMA ====================

def cmd_report(args: argparse.Namespace) -> int:
    root = args.artifact_dir
    if root is None and args.config is not None:
        root = resolve_artifact_dir(_experiment(args))
    if root is None:
        raise ConfigError("report needs --artifact-dir or --config")
    written = build_report(ArtifactStore(root))
    for name, path in sorted(written.items()):
        logger.info(f"{name}: {path}")
    return 0


def cmd_schema(args: argparse.Namespace) -> int:
    text = json.dumps(experiment_schema(), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ==================== PARSER ====================

def _experiment_args(parser: argparse.ArgumentParser, seed_required: bool = False, config_required: bool = True) -> None:
    parser.add_argument("--config", type=Path, required=config_required, help="Experiment JSON file")
    parser.add_argument("--seed", type=int, required=seed_required, help="Global seed (overrides the file)")
    parser.add_argument("--artifact-dir", type=Path, default=None, help="Artifact directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganinvert", description="Data-free GAN inversion and projection defenses")
    parser.add_argument("--log-level", default=None, help="Overrides GANINVERT_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["json", "color", "plain"], default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run every configured stage")
    _experiment_args(run, seed_required=True)
    run.set_defaults(handler=cmd_run)

    for stage in (StageName.PRETRAIN, StageName.DEFEND, StageName.DETECT, StageName.METRICS):
        p = sub.add_parser(stage.value, help=f"Run the {stage.value} stage")
        _experiment_args(p)
        p.set_defaults(handler=_stage_command(stage))

    train = sub.add_parser("train-inverter", help="Train an inverter for a frozen generator")
    _experiment_args(train)
    train.add_argument("--generator", type=Path, default=None, help="Standalone mode: generator checkpoint")
    train.add_argument("--out", type=Path, default=Path("."), help="Standalone mode: output directory")
    train.set_defaults(handler=cmd_train_inverter)

    attack = sub.add_parser("attack", help="Craft adversarial sets")
    _experiment_args(attack)
    attack.add_argument("--family", choices=[f.value for f in AttackFamily], default=None)
    attack.add_argument("--eps", type=float, default=0.3, help="L∞ budget in [0,1] pixel units")
    attack.set_defaults(handler=cmd_attack)

    theorem = sub.add_parser("validate-theorem", help="Check the probabilistic inversion guarantee")
    _experiment_args(theorem, config_required=False)
    theorem.add_argument("--generator", type=Path, default=None)
    theorem.add_argument("--inverter", type=Path, default=None)
    theorem.add_argument("--eps-prime", type=float, default=None)
    theorem.add_argument("--m", type=int, default=None)
    theorem.add_argument("--n", type=int, default=None)
    theorem.add_argument("--out", type=Path, default=None)
    theorem.set_defaults(handler=cmd_validate_theorem)

    project = sub.add_parser("project", help="Project images onto a generator's range")
    project.add_argument("--generator", type=Path, required=True)
    project.add_argument("--inverter", type=Path, default=None)
    project.add_argument("--mode", choices=["direct", "encoder"], default="encoder")
    project.add_argument("--input", type=Path, default=None, help="Archive holding x_adv or x")
    project.add_argument("--mnist-dir", type=Path, default=None)
    project.add_argument("--split", choices=["train", "test"], default="test")
    project.add_argument("--limit", type=int, default=None)
    project.add_argument("--steps", "--T", dest="steps", type=int, default=200)
    project.add_argument("--alpha", type=float, default=0.1)
    project.add_argument("--restarts", type=int, default=10)
    project.add_argument("--seed", type=int, default=0)
    project.add_argument("--batch-size", type=int, default=256)
    project.add_argument("--out", type=Path, required=True)
    project.set_defaults(handler=cmd_project)

    report = sub.add_parser("report", help="Build tables, figures and a PDF from a manifest")
    _experiment_args(report, config_required=False)
    report.set_defaults(handler=cmd_report)

    schema = sub.add_parser("schema", help="Print the experiment JSON schema")
    schema.add_argument("--out", type=Path, default=None)
    schema.set_defaults(handler=cmd_schema)

    return parser


