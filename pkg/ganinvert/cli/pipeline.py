"""
Experiment Pipeline
Runs the configured stages in order against one artifact directory.

Each stage is keyed by the hash of its own config plus the hashes of the
stages it depends on; a stage whose hash matches the manifest and whose
outputs are intact is skipped, so reruns only redo what changed.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import torch

from ganinvert.analysis.theorem_check import validate_theorem
from ganinvert.attacks.base_attack import AttackResult, BaseAttack
from ganinvert.attacks.blackbox import BlackBoxAttack
from ganinvert.attacks.bpda import BPDAAttack
from ganinvert.attacks.cw import CWL2Attack
from ganinvert.attacks.fgsm import FGSMAttack
from ganinvert.attacks.oracle_client import LabelOracleClient
from ganinvert.attacks.reparam import ReparamAttack
from ganinvert.cli.report import ACCURACY_COLUMNS, build_report
from ganinvert.config.experiment_config import ExperimentConfig, StageName, experiment_schema
from ganinvert.config.settings import Settings, get_settings
from ganinvert.defense.defense_eval import (
    ablation_report,
    defend_classify,
    detection_auc,
    detection_records,
    detection_score,
    eval_metrics,
    purify,
    speed_accuracy_curve,
)
from ganinvert.defense.projection import encoder_project
from ganinvert.middleware.error_handler import (
    ConfigError,
    DatasetError,
    GanInvertError,
    MissingDependencyError,
    StageFailureError,
)
from ganinvert.models.networks import ModelHandle, output_shape
from ganinvert.models.schemas import AttackFamily, AttackSpec, DefenseMode
from ganinvert.storage.archive import read_archive, write_archive
from ganinvert.storage.artifacts import ArtifactStore, Manifest, RunnerLock, stage_config_hash
from ganinvert.storage.checkpoint import load_checkpoint, save_checkpoint
from ganinvert.storage.datasets import LabeledImageSet, load_mnist_dir, synth_gaussians
from ganinvert.training.gan_pretrain import accuracy, train_classifier, train_gan
from ganinvert.training.inverter_training import train_inverter
from ganinvert.utils.helpers import derive_seed, export_to_csv, format_duration, set_global_seed

logger = logging.getLogger(__name__)

UNDEFENDED_BLACKBOX = "blackbox_undefended"


# ==================== RUN CONTEXT ====================

@dataclass
class RunContext:
    """Everything a stage may read: config, store, manifest and loaded models."""
    config: ExperimentConfig
    store: ArtifactStore
    manifest: Manifest
    settings: Settings
    _models: Dict[str, ModelHandle] = field(default_factory=dict)
    _data: Dict[str, LabeledImageSet] = field(default_factory=dict)

    def artifact(self, name: str) -> Path:
        path = self.store.find_artifact(name, self.manifest)
        if path is None or not path.exists():
            raise MissingDependencyError(f"artifact '{name}' is not in the manifest", artifact=name)
        return path

    def has_artifact(self, name: str) -> bool:
        return self.store.find_artifact(name, self.manifest) is not None

    def model(self, name: str) -> ModelHandle:
        if name not in self._models:
            self._models[name] = load_checkpoint(self.artifact(name))
        return self._models[name]

    def remember(self, name: str, model: ModelHandle) -> None:
        self._models[name] = model

    def dataset(self, split: str) -> LabeledImageSet:
        if split not in self._data:
            self._data[split] = self._load(split)
        return self._data[split]

    def _load(self, split: str) -> LabeledImageSet:
        data = self.config.data
        if data.kind == "gaussians":
            n = data.n_train if split == "train" else data.n_test
            return synth_gaussians(data.k_modes, n, seed=derive_seed(self.config.seed, "data", split),
                                   radius=data.radius, std=data.std, split=split)
        directory = data.mnist_dir or self.settings.mnist_dir
        if directory is None:
            raise ConfigError("mnist data needs data.mnist_dir or GANINVERT_MNIST_DIR")
        limit = data.train_limit if split == "train" else None
        return load_mnist_dir(directory, split=split, limit=limit)

    def eval_set(self, n: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """The first n test images and their labels."""
        test = self.dataset("test")
        if len(test) == 0:
            raise DatasetError("test split is empty")
        subset = test.head(min(n, len(test)))
        return subset.to_tensor(), subset.label_tensor()


# ==================== STAGES ====================

class Stage(ABC):
    """
    One pipeline step.

    Subclasses declare the stages they need (requires) or merely use when
    present (optional), the config slice that keys them, and execute(),
    which returns artifact name → path relative to the artifact directory.
    """

    name: StageName
    requires: Tuple[StageName, ...] = ()
    optional: Tuple[StageName, ...] = ()

    def __init__(self):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    @abstractmethod
    def config_payload(self, cfg: ExperimentConfig) -> Dict[str, Any]:
        """Config slice whose change invalidates this stage."""

    @abstractmethod
    def execute(self, ctx: RunContext) -> Dict[str, str]:
        """Run the stage and return its artifacts."""

    def log_execution(self, operation: str, status: str, details: Optional[str] = None) -> None:
        message = f"[{self.name.value}] {operation}: {status}"
        if details:
            message += f" - {details}"
        self.logger.info(message)


class PretrainStage(Stage):
    name = StageName.PRETRAIN

    def config_payload(self, cfg):
        return {"data": cfg.data.model_dump(mode="json"), "gan": cfg.gan.model_dump(mode="json"),
                "classifier": cfg.classifier.model_dump(mode="json")}

    def execute(self, ctx):
        cfg = ctx.config
        train = ctx.dataset("train")
        workers = {"num_workers": ctx.settings.num_workers} if ctx.settings.num_workers else {}
        G, D, gan_log = train_gan(train, cfg.gan.model_copy(update=workers))
        f, clf_log = train_classifier(train, cfg.classifier.model_copy(update=workers))

        x, y = ctx.eval_set(len(ctx.dataset("test")))
        test_accuracy = accuracy(f, x, y)
        self.log_execution("classifier", "evaluated", f"test accuracy {test_accuracy:.4f}")

        artifacts = {
            "generator": "models/generator.ckpt",
            "discriminator": "models/discriminator.ckpt",
            "classifier": "models/classifier.ckpt",
            "gan_log": "logs/gan.json",
            "classifier_log": "logs/classifier.json",
            "pretrain_summary": "pretrain_summary.json",
        }
        save_checkpoint(G, ctx.store.path(artifacts["generator"]))
        save_checkpoint(D, ctx.store.path(artifacts["discriminator"]))
        save_checkpoint(f, ctx.store.path(artifacts["classifier"]))
        ctx.store.write_json(artifacts["gan_log"], gan_log)
        ctx.store.write_json(artifacts["classifier_log"], clf_log)
        ctx.store.write_json(artifacts["pretrain_summary"], {
            "classifier_test_accuracy": test_accuracy,
            "latent_dim": cfg.gan.latent_dim,
            "image_shape": list(train.image_shape),
            "train_source": train.source,
            "n_train": len(train),
        })
        ctx.remember("generator", G)
        ctx.remember("classifier", f)
        return artifacts


class TrainInverterStage(Stage):
    name = StageName.TRAIN_INVERTER
    requires = (StageName.PRETRAIN,)

    def config_payload(self, cfg):
        return {"inverter": cfg.inverter.model_dump(mode="json")}

    def execute(self, ctx):
        I, D, log = train_inverter(ctx.model("generator"), ctx.config.inverter)
        artifacts = {
            "inverter": "models/inverter.ckpt",
            "inversion_discriminator": "models/inversion_discriminator.ckpt",
            "inverter_log": "logs/inverter.json",
        }
        save_checkpoint(I, ctx.store.path(artifacts["inverter"]))
        save_checkpoint(D, ctx.store.path(artifacts["inversion_discriminator"]))
        ctx.store.write_json(artifacts["inverter_log"], log)
        ctx.remember("inverter", I)
        return artifacts


def _num_classes(classifier: ModelHandle) -> int:
    return output_shape(classifier.spec)[0]


class AttackStage(Stage):
    name = StageName.ATTACK
    requires = (StageName.PRETRAIN, StageName.TRAIN_INVERTER)

    def config_payload(self, cfg):
        return {"attack": cfg.attack.model_dump(mode="json"),
                "encoder_projection": cfg.defend.encoder_projection.model_dump(mode="json")}

    def _attacks(self, ctx: RunContext, spec: AttackSpec) -> List[Tuple[str, BaseAttack]]:
        f, G, I = ctx.model("classifier"), ctx.model("generator"), ctx.model("inverter")
        projection = ctx.config.defend.encoder_projection

        def defense_fn(x: torch.Tensor) -> torch.Tensor:
            return encoder_project(G, I, x, projection).x_proj

        if spec.family == AttackFamily.FGSM:
            return [(spec.family.value, FGSMAttack(spec, f))]
        if spec.family == AttackFamily.CW_L2:
            return [(spec.family.value, CWL2Attack(spec, f))]
        if spec.family == AttackFamily.REPARAM:
            return [(spec.family.value, ReparamAttack(spec, f, G, I))]
        if spec.family == AttackFamily.BPDA:
            return [(spec.family.value, BPDAAttack(spec, f, defense_fn))]

        n = ctx.config.attack.n_samples
        test = ctx.dataset("test")
        size = ctx.config.attack.seed_set_size
        if len(test) < n + size:
            raise DatasetError(f"black-box seed set needs {n + size} test images, have {len(test)}")
        seed_x = test.subset(range(n, n + size)).to_tensor()
        k = _num_classes(f)

        def defended_oracle(x: torch.Tensor) -> torch.Tensor:
            return defend_classify(f, G, I, x, projection, DefenseMode.ENCODER)

        def undefended_oracle(x: torch.Tensor) -> torch.Tensor:
            return defend_classify(f, G, None, x, projection, DefenseMode.NONE)

        return [
            (spec.family.value, BlackBoxAttack(spec, LabelOracleClient(defended_oracle, k), seed_x)),
            (UNDEFENDED_BLACKBOX, BlackBoxAttack(spec, LabelOracleClient(undefended_oracle, k), seed_x)),
        ]

    def execute(self, ctx):
        x, y = ctx.eval_set(ctx.config.attack.n_samples)
        artifacts: Dict[str, str] = {}
        summary: Dict[str, Dict[str, Any]] = {}
        for spec in ctx.config.attack.specs:
            for key, attack in self._attacks(ctx, spec):
                start = time.time()
                result: AttackResult = attack.generate(x, y)
                relative = f"attacks/{key}.archive"
                write_archive(ctx.store.path(relative), result.arrays(), {
                    "kind": "adversarial_set",
                    "family": result.family,
                    "set": key,
                    "eps": result.eps,
                    "attack_spec": spec.model_dump(mode="json"),
                    "metadata": result.metadata,
                })
                artifacts[f"attack_{key}"] = relative
                summary[key] = {
                    "success_rate": result.success_rate,
                    "max_linf": result.linf().max().item() if len(result.x) else 0.0,
                    "mean_l2": result.l2().mean().item() if len(result.x) else 0.0,
                    "n_samples": len(result.x),
                }
                self.log_execution(key, "completed",
                                   f"success {result.success_rate:.3f} in {format_duration(time.time() - start)}")
        artifacts["attack_summary"] = "attack_summary.json"
        ctx.store.write_json(artifacts["attack_summary"], summary)
        return artifacts


def _load_set(ctx: RunContext, key: str) -> Tuple[torch.Tensor, torch.Tensor]:
    arrays, _ = read_archive(ctx.artifact(f"attack_{key}"))
    return torch.from_numpy(arrays["x_adv"]), torch.from_numpy(arrays["y"]).long()


class DefendStage(Stage):
    name = StageName.DEFEND
    requires = (StageName.PRETRAIN, StageName.TRAIN_INVERTER)
    optional = (StageName.ATTACK,)

    def config_payload(self, cfg):
        return {"defend": cfg.defend.model_dump(mode="json"), "n_samples": cfg.attack.n_samples}

    def _column_set(self, ctx: RunContext, mode: DefenseMode, column: str,
                    clean: Tuple[torch.Tensor, torch.Tensor]) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        if column == "clean":
            return clean
        key = column
        if column == AttackFamily.BLACKBOX.value and mode == DefenseMode.NONE:
            key = UNDEFENDED_BLACKBOX
        if not ctx.has_artifact(f"attack_{key}"):
            return None
        return _load_set(ctx, key)

    def execute(self, ctx):
        cfg = ctx.config.defend
        f, G, I = ctx.model("classifier"), ctx.model("generator"), ctx.model("inverter")
        clean = ctx.eval_set(ctx.config.attack.n_samples)
        grid: Dict[str, Dict[str, float]] = {}
        artifacts: Dict[str, str] = {}

        for mode in cfg.modes:
            projection = cfg.encoder_projection if mode == DefenseMode.ENCODER else cfg.direct_projection
            grid[mode.value] = {}
            stored: Dict[str, torch.Tensor] = {}
            for column in ACCURACY_COLUMNS:
                batch = self._column_set(ctx, mode, column, clean)
                if batch is None:
                    continue
                x, y = batch
                result = purify(G, I, x.to(G.dtype), projection, mode)
                purified = x if result is None else result.x_proj
                with torch.no_grad():
                    labels = f(purified.to(f.dtype)).argmax(dim=1)
                grid[mode.value][column] = (labels == y).double().mean().item()
                if result is not None:
                    stored[f"{column}.input"] = x
                    stored[f"{column}.proj"] = result.x_proj
            self.log_execution(mode.value, "evaluated",
                               ", ".join(f"{k}={v:.3f}" for k, v in grid[mode.value].items()))
            if stored:
                relative = f"projections/{mode.value}.archive"
                write_archive(ctx.store.path(relative), stored, {
                    "kind": "projections", "mode": mode.value,
                    "projection": projection.model_dump(mode="json"),
                })
                artifacts[f"projections_{mode.value}"] = relative

        x, y = clean
        n = min(cfg.speed_accuracy_samples, x.shape[0])
        enc = cfg.encoder_projection
        rows = speed_accuracy_curve(f, G, I, x[:n], y[:n], cfg.speed_accuracy_iterations,
                                    restarts=cfg.speed_accuracy_restarts, alpha=enc.alpha,
                                    seed=enc.seed, batch_size=enc.batch_size)

        artifacts["defense_report"] = "defense_report.json"
        artifacts["speed_accuracy"] = "speed_accuracy.csv"
        ctx.store.write_json(artifacts["defense_report"], {
            "accuracy": grid,
            "n_samples": int(x.shape[0]),
            "speed_accuracy": rows,
        })
        export_to_csv(rows, ctx.store.path(artifacts["speed_accuracy"]),
                      fieldnames=["effective_iterations", "encoder_accuracy", "random_restart_accuracy"])
        return artifacts


class DetectStage(Stage):
    name = StageName.DETECT
    requires = (StageName.PRETRAIN, StageName.DEFEND)

    def config_payload(self, cfg):
        return {"detect": cfg.detect.model_dump(mode="json")}

    def execute(self, ctx):
        f = ctx.model("classifier")
        aucs: Dict[str, Dict[str, Dict[str, float]]] = {}
        rows: List[Dict[str, Any]] = []
        for mode in (DefenseMode.DIRECT, DefenseMode.ENCODER):
            name = f"projections_{mode.value}"
            if not ctx.has_artifact(name):
                continue
            arrays, _ = read_archive(ctx.artifact(name))
            if "clean.input" not in arrays:
                continue
            columns = [c for c in ACCURACY_COLUMNS if c != "clean" and f"{c}.input" in arrays]
            aucs[mode.value] = {}
            for space in ctx.config.detect.spaces:
                scores = {
                    column: detection_score(f, torch.from_numpy(arrays[f"{column}.input"]),
                                            torch.from_numpy(arrays[f"{column}.proj"]), space)
                    for column in ["clean"] + columns
                }
                aucs[mode.value][space] = {
                    column: detection_auc(scores["clean"].tolist(), scores[column].tolist())
                    for column in columns
                }
                for column, values in scores.items():
                    for record in detection_records(values, column != "clean", column):
                        rows.append({"mode": mode.value, "space": space, **record.model_dump()})
                self.log_execution(f"{mode.value}/{space}", "scored", str(aucs[mode.value][space]))

        if not aucs:
            raise MissingDependencyError("detection needs stored clean projections from the defend stage")
        artifacts = {"detection": "detection.json", "detection_scores": "detection_scores.csv"}
        ctx.store.write_json(artifacts["detection"], {"auc": aucs})
        export_to_csv(rows, ctx.store.path(artifacts["detection_scores"]),
                      fieldnames=["mode", "space", "family", "attacked", "sample_id", "score"])
        return artifacts


class MetricsStage(Stage):
    name = StageName.METRICS
    requires = (StageName.PRETRAIN, StageName.TRAIN_INVERTER)

    def config_payload(self, cfg):
        payload = {"metrics": cfg.metrics.model_dump(mode="json"),
                   "encoder_projection": cfg.defend.encoder_projection.model_dump(mode="json"),
                   "direct_projection": cfg.defend.direct_projection.model_dump(mode="json")}
        if cfg.metrics.ablation:
            payload["inverter"] = cfg.inverter.model_dump(mode="json")
        return payload

    def execute(self, ctx):
        cfg = ctx.config
        f, G, I = ctx.model("classifier"), ctx.model("generator"), ctx.model("inverter")
        x, y = ctx.eval_set(cfg.metrics.n_samples)

        settings = [("direct", DefenseMode.DIRECT,
                     cfg.defend.direct_projection.model_copy(update={"steps": cfg.metrics.direct_steps}))]
        settings += [("encoder", DefenseMode.ENCODER,
                      cfg.defend.encoder_projection.model_copy(update={"steps": steps}))
                     for steps in cfg.metrics.encoder_steps]

        rows = []
        for label, mode, projection in settings:
            recon = purify(G, I, x, projection, mode).x_proj
            report = eval_metrics(x, recon, y, f)
            rows.append({"setting": f"{label}_T{projection.steps}", "mode": mode.value,
                         "steps": projection.steps, "restarts": projection.restarts,
                         **report.model_dump()})
            self.log_execution(rows[-1]["setting"], "measured",
                               f"mse={report.mse_mean:.4f} fid={report.proxy_fid:.4f} acc={report.accuracy:.3f}")

        artifacts = {"metrics": "metrics.json", "metrics_table": "metrics.csv"}
        ctx.store.write_json(artifacts["metrics"], {"rows": rows})
        export_to_csv(rows, ctx.store.path(artifacts["metrics_table"]))
        if cfg.metrics.ablation:
            artifacts["ablation"] = "ablation.json"
            ctx.store.write_json(artifacts["ablation"], ablation_report(G, cfg.inverter, f, x, y))
        return artifacts


class ValidateTheoremStage(Stage):
    name = StageName.VALIDATE_THEOREM
    requires = (StageName.PRETRAIN, StageName.TRAIN_INVERTER)

    def config_payload(self, cfg):
        return {"theorem": cfg.theorem.model_dump(mode="json")}

    def execute(self, ctx):
        reports = validate_theorem(ctx.model("inverter"), ctx.model("generator"), ctx.config.theorem)
        for report in reports:
            self.log_execution(f"ε′={report.eps_prime:.3f}", report.status, f"p̂={report.p_hat:.4f}")
        artifacts = {"theorem": "theorem.json", "theorem_table": "theorem.csv"}
        ctx.store.write_json(artifacts["theorem"], [r.model_dump(mode="json") for r in reports])
        export_to_csv([r.model_dump(mode="json") for r in reports], ctx.store.path(artifacts["theorem_table"]))
        return artifacts


class ReportStage(Stage):
    name = StageName.REPORT
    optional = tuple(s for s in StageName if s != StageName.REPORT)

    def config_payload(self, cfg):
        return {}

    def execute(self, ctx):
        ctx.store.save_manifest(ctx.manifest)
        return build_report(ctx.store, ctx.manifest)


STAGES: Dict[StageName, Stage] = {
    stage.name: stage
    for stage in (PretrainStage(), TrainInverterStage(), AttackStage(), DefendStage(), DetectStage(),
                  MetricsStage(), ValidateTheoremStage(), ReportStage())
}


# ==================== RUNNER ====================

def _upstream_hashes(stage: Stage, hashes: Dict[StageName, str], manifest: Manifest) -> List[str]:
    upstream = []
    for dep in stage.requires + stage.optional:
        known = hashes.get(dep)
        if known is None and manifest.get(dep.value) is not None:
            known = manifest.get(dep.value).config_hash
        if known is None:
            if dep in stage.requires:
                raise MissingDependencyError(
                    f"stage '{stage.name.value}' needs '{dep.value}', which has not run", stage=stage.name.value
                )
            continue
        upstream.append(f"{dep.value}:{known}")
    return upstream


def resolve_artifact_dir(cfg: ExperimentConfig, override: Optional[Path] = None) -> Path:
    return Path(override or get_settings().artifact_dir or cfg.artifact_dir)


def run_experiment(cfg: ExperimentConfig, artifact_dir: Optional[Path] = None) -> Manifest:
    """
    Execute cfg.stages against the artifact directory.

    Args:
        cfg: Validated experiment
        artifact_dir: Overrides GANINVERT_ARTIFACT_DIR and cfg.artifact_dir

    Returns:
        Manifest: The saved manifest

    Raises:
        LockError: Another runner holds the directory
        MissingDependencyError: A required upstream stage never ran
        StageFailureError: A stage raised an unexpected exception
    """
    settings = get_settings()
    store = ArtifactStore(resolve_artifact_dir(cfg, artifact_dir))
    logger.info(f"Running {len(cfg.stages)} stage(s) in {store.root} with seed {cfg.seed}")

    with RunnerLock(store.root):
        set_global_seed(cfg.seed)
        store.write_json("config.schema.json", experiment_schema())
        store.write_json("config.json", cfg)
        manifest = store.load_manifest()
        manifest.seed = cfg.seed
        ctx = RunContext(config=cfg, store=store, manifest=manifest, settings=settings)
        hashes: Dict[StageName, str] = {}

        for name in cfg.stages:
            stage = STAGES[name]
            config_hash = stage_config_hash(stage.config_payload(cfg), _upstream_hashes(stage, hashes, manifest))
            hashes[name] = config_hash
            if store.stage_is_current(manifest, name.value, config_hash):
                stage.log_execution("execute", "skipped", "outputs current")
                continue

            start = time.time()
            stage.log_execution("execute", "started", config_hash[:12])
            try:
                artifacts = stage.execute(ctx)
            except GanInvertError:
                stage.log_execution("execute", "failed")
                store.save_manifest(manifest)
                raise
            except Exception as e:
                store.save_manifest(manifest)
                raise StageFailureError(f"stage '{name.value}' failed: {e}", stage=name.value) from e

            store.record_stage(manifest, name.value, config_hash, artifacts)
            store.save_manifest(manifest)
            stage.log_execution("execute", "completed",
                                f"{len(artifacts)} artifact(s) in {format_duration(time.time() - start)}")

        store.save_manifest(manifest)
    return manifest


def run_stage(cfg: ExperimentConfig, stage: StageName, artifact_dir: Optional[Path] = None) -> Manifest:
    """Run a single stage; its dependencies must already be in the manifest."""
    return run_experiment(cfg.model_copy(update={"stages": [stage]}), artifact_dir)
