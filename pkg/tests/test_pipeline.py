"""
Experiment config, the stage runner, the report builder and CLI exit codes.
"""

import json

import pandas as pd
import pytest
from pydantic import ValidationError

from ganinvert.cli.commands import build_parser
from ganinvert.cli.pipeline import run_experiment, run_stage
from ganinvert.cli.report import ACCURACY_COLUMNS, accuracy_grid, build_report
from ganinvert.config.experiment_config import ExperimentConfig, StageName, load_experiment
from ganinvert.main import main
from ganinvert.middleware.error_handler import (
    ConfigError,
    ExitCode,
    LockError,
    MissingDependencyError,
    ReportError,
)
from ganinvert.models.schemas import TheoremReport
from ganinvert.storage.artifacts import LOCK_NAME, ArtifactStore


def _tiny_experiment(artifact_dir, **overrides) -> ExperimentConfig:
    payload = {
        "seed": 3,
        "artifact_dir": str(artifact_dir),
        "data": {"kind": "gaussians", "k_modes": 2, "n_train": 64, "n_test": 40},
        "gan": {"iterations": 3, "batch_size": 16, "latent_dim": 2},
        "classifier": {"iterations": 3, "batch_size": 16},
        "inverter": {"iterations": 3, "batch_size": 16},
        "attack": {
            "n_samples": 16,
            "specs": [{"family": "fgsm", "eps": 0.1}, {"family": "reparam", "eps": 0.1},
                      {"family": "bpda", "eps": 0.1, "bpda_steps": 2}],
        },
        "defend": {
            "encoder_projection": {"steps": 2, "init_mode": "encoder"},
            "direct_projection": {"steps": 2, "restarts": 2},
            "speed_accuracy_iterations": [0, 4],
            "speed_accuracy_restarts": 2,
            "speed_accuracy_samples": 8,
        },
        "metrics": {"n_samples": 16, "direct_steps": 2, "encoder_steps": [0, 2]},
        "theorem": {"n_train": 20, "m": 50, "n_pairs": 10},
    }
    payload.update(overrides)
    return ExperimentConfig.model_validate(payload)


def _write_config(path, payload) -> None:
    path.write_text(json.dumps(payload), encoding="utf-8")


# ==================== CONFIG ====================

def test_stage_configs_inherit_the_global_seed(tmp_path):
    cfg = _tiny_experiment(tmp_path)
    assert cfg.gan.seed == cfg.inverter.seed == cfg.theorem.seed == 3
    assert cfg.defend.encoder_projection.seed == 3
    assert all(spec.seed == 3 for spec in cfg.attack.specs)


def test_stages_must_keep_pipeline_order(tmp_path):
    with pytest.raises(ValidationError):
        _tiny_experiment(tmp_path, stages=["train-inverter", "pretrain"])
    with pytest.raises(ValidationError):
        _tiny_experiment(tmp_path, stages=["pretrain", "pretrain"])


def test_attack_families_are_unique(tmp_path):
    with pytest.raises(ValidationError):
        _tiny_experiment(tmp_path, attack={"specs": [{"family": "fgsm"}, {"family": "fgsm", "eps": 0.1}]})


def test_load_experiment_reports_config_errors(tmp_path):
    path = tmp_path / "experiment.json"
    _write_config(path, {"seed": 0, "stages": ["report", "pretrain"]})
    with pytest.raises(ConfigError):
        load_experiment(path)
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment(path)


def test_seed_override(tmp_path):
    path = tmp_path / "experiment.json"
    _write_config(path, {"seed": 0, "stages": []})
    assert load_experiment(path, seed=11).gan.seed == 11


# ==================== RUNNER ====================

def test_empty_run_writes_config_and_manifest(artifact_dir):
    manifest = run_experiment(_tiny_experiment(artifact_dir, stages=[]))
    assert manifest.stages == []
    assert manifest.seed == 3
    for name in ("manifest.json", "config.json", "config.schema.json"):
        assert (artifact_dir / name).exists()
    assert not (artifact_dir / LOCK_NAME).exists()


def test_held_lock_refuses_to_run(artifact_dir):
    (artifact_dir / LOCK_NAME).write_text("12345")
    with pytest.raises(LockError):
        run_experiment(_tiny_experiment(artifact_dir, stages=[]))


def test_stage_without_upstream_is_a_missing_dependency(artifact_dir):
    with pytest.raises(MissingDependencyError):
        run_stage(_tiny_experiment(artifact_dir), StageName.TRAIN_INVERTER)


def test_detect_needs_stored_projections(artifact_dir):
    cfg = _tiny_experiment(artifact_dir)
    with pytest.raises(MissingDependencyError):
        run_stage(cfg, StageName.DETECT)


@pytest.mark.slow
def test_full_gaussian_run_and_rerun(artifact_dir):
    cfg = _tiny_experiment(artifact_dir)
    manifest = run_experiment(cfg)
    assert [s.stage for s in manifest.stages] == [s.value for s in StageName]

    defense = json.loads((artifact_dir / "defense_report.json").read_text())
    assert set(defense["accuracy"]) == {"none", "direct", "encoder"}
    assert set(defense["accuracy"]["encoder"]) == {"clean", "fgsm", "reparam", "bpda"}
    assert all(0.0 <= v <= 1.0 for row in defense["accuracy"].values() for v in row.values())
    assert [r["effective_iterations"] for r in defense["speed_accuracy"]] == [0.0, 4.0]

    detection = json.loads((artifact_dir / "detection.json").read_text())
    assert set(detection["auc"]) == {"direct", "encoder"}
    assert (artifact_dir / "report" / "report.pdf").exists()
    theorem = json.loads((artifact_dir / "theorem.json").read_text())
    assert len(theorem) == 4

    before = {s.stage: s.completed_at for s in manifest.stages}
    again = run_experiment(cfg)
    assert {s.stage: s.completed_at for s in again.stages} == before

    changed = cfg.model_copy(update={"metrics": cfg.metrics.model_copy(update={"encoder_steps": [0]})})
    third = run_experiment(changed)
    after = {s.stage: s.completed_at for s in third.stages}
    assert after["pretrain"] == before["pretrain"]
    assert after["defend"] == before["defend"]


# ==================== REPORT ====================

def _theorem_report() -> TheoremReport:
    return TheoremReport(n=10, d=2, eps=0.1, eps_prime=8.0, lipschitz_estimate=1.0, p_hat=0.9,
                         p_hat_ci=(0.8, 0.95), bound=0.63, bound_at_2l=0.2, status="satisfied", m=100, seed=0)


def test_report_needs_a_manifest(artifact_dir):
    with pytest.raises(ReportError) as exc:
        build_report(ArtifactStore(artifact_dir))
    assert exc.value.missing == ["manifest.json"]


def test_report_needs_some_input(artifact_dir):
    store = ArtifactStore(artifact_dir)
    store.save_manifest(store.load_manifest())
    with pytest.raises(ReportError):
        build_report(store)


def test_partial_manifest_reports_absent_inputs(artifact_dir):
    store = ArtifactStore(artifact_dir)
    manifest = store.load_manifest()
    store.write_json("theorem.json", [_theorem_report().model_dump(mode="json")])
    store.record_stage(manifest, "validate-theorem", "hash", {"theorem": "theorem.json"})
    store.save_manifest(manifest)

    written = build_report(store)
    assert (artifact_dir / written["report_pdf"]).exists()
    assert "report_theorem_plot" in written
    summary = store.read_json("report/summary.json")
    assert summary["missing"] == ["defense_report", "detection", "metrics", "ablation"]


def test_accuracy_grid_marks_missing_cells():
    grid = accuracy_grid({"accuracy": {"encoder": {"clean": 0.9, "fgsm": 0.4}}})
    assert list(grid.columns) == ACCURACY_COLUMNS
    assert grid.loc["encoder", "clean"] == 0.9
    assert grid.isna().loc["none"].all()
    assert grid.isna().sum().sum() == grid.size - 2


def test_report_tables_parse_back_to_the_emitted_values(artifact_dir):
    store = ArtifactStore(artifact_dir)
    manifest = store.load_manifest()
    accuracy = {"none": {"clean": 0.99, "fgsm": 0.125}, "encoder": {"clean": 0.97, "fgsm": 0.8125, "bpda": 0.5}}
    speed = [{"effective_iterations": 50.0, "encoder_accuracy": 0.9, "random_restart_accuracy": 0.6},
             {"effective_iterations": 200.0, "encoder_accuracy": 0.95, "random_restart_accuracy": 0.8}]
    store.write_json("defense_report.json", {"accuracy": accuracy, "speed_accuracy": speed})
    store.record_stage(manifest, "defend", "hash", {"defense_report": "defense_report.json"})
    store.save_manifest(manifest)

    written = build_report(store)
    grid = pd.read_csv(artifact_dir / written["report_accuracy_grid"], index_col="defense")
    pd.testing.assert_frame_equal(grid, accuracy_grid({"accuracy": accuracy}), check_names=False)
    parsed = pd.read_csv(artifact_dir / written["report_speed_accuracy"]).to_dict("records")
    assert parsed == speed
    # the encoder curve sits on or above the random-restart curve at every budget
    assert all(row["encoder_accuracy"] >= row["random_restart_accuracy"] for row in parsed)


# ==================== CLI ====================

def test_project_accepts_t_as_the_step_count(tmp_path):
    parser = build_parser()
    base = ["project", "--generator", str(tmp_path / "g.ckpt"), "--out", str(tmp_path / "out.npz")]
    assert parser.parse_args(base + ["--T", "5"]).steps == 5
    assert parser.parse_args(base + ["--steps", "7"]).steps == 7
    assert parser.parse_args(base).steps == 200


def test_schema_command_succeeds(tmp_path):
    out = tmp_path / "schema.json"
    assert main(["schema", "--out", str(out)]) == 0
    assert "properties" in json.loads(out.read_text())


def test_bad_config_exits_with_config_code(tmp_path):
    path = tmp_path / "bad.json"
    _write_config(path, {"seed": 0, "stages": ["nope"]})
    assert main(["run", "--config", str(path), "--seed", "0"]) == ExitCode.CONFIG == 2


def test_locked_directory_exits_with_lock_code(tmp_path, artifact_dir):
    path = tmp_path / "experiment.json"
    _write_config(path, {"seed": 0, "stages": []})
    (artifact_dir / LOCK_NAME).write_text("1")
    code = main(["run", "--config", str(path), "--seed", "0", "--artifact-dir", str(artifact_dir)])
    assert code == ExitCode.LOCKED == 5


def test_missing_upstream_exits_with_dependency_code(tmp_path, artifact_dir):
    path = tmp_path / "experiment.json"
    _write_config(path, {"seed": 0, "data": {"kind": "gaussians"}})
    code = main(["train-inverter", "--config", str(path), "--artifact-dir", str(artifact_dir)])
    assert code == ExitCode.MISSING_DEPENDENCY == 3
