"""
Report Builder
Collects stage outputs from a manifest into tables (CSV), figures (PNG)
and one PDF. Inputs that never ran are marked absent rather than failing.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ganinvert.middleware.error_handler import ReportError  # noqa: E402
from ganinvert.models.schemas import AttackFamily, DefenseMode  # noqa: E402
from ganinvert.storage.artifacts import MANIFEST_NAME, ArtifactStore, Manifest  # noqa: E402
from ganinvert.utils.helpers import ensure_directory, export_to_csv, save_report_pdf  # noqa: E402

logger = logging.getLogger(__name__)

ACCURACY_COLUMNS = ["clean"] + [f.value for f in AttackFamily]
ATTACK_COLUMNS = [f.value for f in AttackFamily]
DEFENSE_ROWS = [m.value for m in DefenseMode]
DETECTION_SPACES = ["feature", "image"]
REPORT_INPUTS = ["defense_report", "detection", "metrics", "ablation", "theorem"]


# ==================== TABLES ====================

def accuracy_grid(defense_report: Optional[Dict[str, Any]]) -> pd.DataFrame:
    """Defense × (clean + attack) accuracy; cells that never ran are NaN."""
    grid = pd.DataFrame(math.nan, index=DEFENSE_ROWS, columns=ACCURACY_COLUMNS)
    for mode, row in (defense_report or {}).get("accuracy", {}).items():
        for column, value in row.items():
            if mode in grid.index and column in grid.columns:
                grid.loc[mode, column] = value
    grid.index.name = "defense"
    return grid


def auc_grid(detection: Optional[Dict[str, Any]]) -> pd.DataFrame:
    """(projection mode, score space) × attack detection AUC."""
    index = [f"{mode} ({space})" for mode in ("direct", "encoder") for space in DETECTION_SPACES]
    grid = pd.DataFrame(math.nan, index=index, columns=ATTACK_COLUMNS)
    for mode, spaces in (detection or {}).get("auc", {}).items():
        for space, row in spaces.items():
            for column, value in row.items():
                key = f"{mode} ({space})"
                if key in grid.index and column in grid.columns:
                    grid.loc[key, column] = value
    grid.index.name = "detector"
    return grid


def ablation_table(ablation: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for variant in ("full", "ablated"):
        metrics = ablation[variant]
        rows.append({"inverter": variant, "mse_mean": metrics["mse_mean"], "proxy_fid": metrics["proxy_fid"],
                     "proxy_is": metrics["proxy_is"], "accuracy": metrics["accuracy"]})
    return pd.DataFrame(rows)


# ==================== FIGURES ====================

def plot_speed_accuracy(rows: List[Dict[str, float]], output_path: Path) -> Path:
    frame = pd.DataFrame(rows).sort_values("effective_iterations")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["effective_iterations"], frame["encoder_accuracy"], marker="o", label="encoder init (R=1)")
    ax.plot(frame["effective_iterations"], frame["random_restart_accuracy"], marker="s", label="random restarts")
    if (frame["effective_iterations"] > 0).all():
        ax.set_xscale("log")
    ax.set_xlabel("effective iterations (R·T)")
    ax.set_ylabel("clean defended accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(output_path, dpi=120)
    plt.close(fig)
    return output_path


def plot_theorem(reports: List[Dict[str, Any]], output_path: Path) -> Path:
    frame = pd.DataFrame(reports).sort_values("eps_prime")
    low = frame["p_hat"] - frame["p_hat_ci"].map(lambda ci: ci[0])
    high = frame["p_hat_ci"].map(lambda ci: ci[1]) - frame["p_hat"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(frame["eps_prime"], frame["p_hat"], yerr=[low, high], marker="o", capsize=3, label="p̂ (95% CI)")
    bounded = frame.dropna(subset=["bound"])
    if not bounded.empty:
        ax.plot(bounded["eps_prime"], bounded["bound"], marker="x", linestyle="--", label="analytic bound")
    ax.set_xlabel("ε′")
    ax.set_ylabel("P(‖I(G(z)) − z‖ < ε′)")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(output_path, dpi=120)
    plt.close(fig)
    return output_path


# ==================== REPORT ====================

def _read(store: ArtifactStore, manifest: Manifest, name: str) -> Optional[Any]:
    path = store.find_artifact(name, manifest)
    if path is None or not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _frame_rows(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return frame.reset_index().to_dict("records")


def build_report(store: ArtifactStore, manifest: Optional[Manifest] = None,
                 output_dir: str = "report") -> Dict[str, str]:
    """
    Write report tables, figures and a PDF under output_dir.

    Args:
        store: Artifact directory
        manifest: Manifest to read (loaded from the store when None)
        output_dir: Report directory relative to the store root

    Returns:
        Dict[str, str]: Artifact name → path relative to the store root

    Raises:
        ReportError: No manifest, or none of the reportable artifacts exist
    """
    if manifest is None:
        if not store.manifest_path.exists():
            raise ReportError(f"no manifest in {store.root}", missing=[MANIFEST_NAME])
        manifest = store.load_manifest()

    inputs = {name: _read(store, manifest, name) for name in REPORT_INPUTS}
    missing = [name for name, value in inputs.items() if value is None]
    if len(missing) == len(REPORT_INPUTS):
        raise ReportError("none of the report inputs exist", missing=missing)
    for name in missing:
        logger.warning(f"Report input '{name}' is absent")

    out = ensure_directory(store.path(output_dir))
    artifacts: Dict[str, str] = {}
    sections: List[Dict[str, Any]] = []

    def _written(name: str, path: Path) -> None:
        artifacts[name] = str(path.relative_to(store.root))

    accuracy = accuracy_grid(inputs["defense_report"])
    _written("report_accuracy_grid", export_to_csv(_frame_rows(accuracy), out / "accuracy_grid.csv"))
    sections.append({"heading": "Classification accuracy under attack",
                     "text": "Rows are defenses, columns are the evaluated sets.",
                     "table": accuracy.reset_index()})

    detection = auc_grid(inputs["detection"])
    _written("report_auc_grid", export_to_csv(_frame_rows(detection), out / "auc_grid.csv"))
    sections.append({"heading": "Attack detection AUC", "table": detection.reset_index()})

    speed_rows = (inputs["defense_report"] or {}).get("speed_accuracy") or []
    if speed_rows:
        _written("report_speed_accuracy", export_to_csv(speed_rows, out / "speed_accuracy.csv"))
        figure = plot_speed_accuracy(speed_rows, out / "speed_accuracy.png")
        _written("report_speed_accuracy_plot", figure)
        sections.append({"heading": "Speed versus accuracy", "table": pd.DataFrame(speed_rows), "image": figure})

    if inputs["metrics"] is not None:
        frame = pd.DataFrame(inputs["metrics"]["rows"])
        _written("report_metrics", export_to_csv(frame.to_dict("records"), out / "metrics.csv"))
        sections.append({"heading": "Reconstruction quality",
                         "table": frame[["setting", "mse_mean", "mse_std", "accuracy", "proxy_is", "proxy_fid"]]})

    if inputs["ablation"] is not None:
        frame = ablation_table(inputs["ablation"])
        _written("report_ablation", export_to_csv(frame.to_dict("records"), out / "ablation.csv"))
        holds = "holds" if inputs["ablation"]["direction_holds"] else "does not hold"
        sections.append({"heading": "Adversarial-loss ablation",
                         "text": f"Expected direction (ablated: lower MSE, higher FID) {holds}.",
                         "table": frame})

    if inputs["theorem"]:
        frame = pd.DataFrame(inputs["theorem"])
        _written("report_theorem", export_to_csv(frame.to_dict("records"), out / "theorem.csv"))
        figure = plot_theorem(inputs["theorem"], out / "theorem.png")
        _written("report_theorem_plot", figure)
        sections.append({"heading": "Inversion guarantee",
                         "table": frame[["eps_prime", "eps", "lipschitz_estimate", "p_hat", "bound", "status"]],
                         "image": figure})

    if missing:
        sections.append({"heading": "Absent inputs", "text": ", ".join(missing)})
    store.write_json(f"{output_dir}/summary.json", {"missing": missing, "files": sorted(artifacts.values())})
    artifacts["report_summary"] = f"{output_dir}/summary.json"
    _written("report_pdf", save_report_pdf(sections, out / "report.pdf", title="Inversion Defense Report"))
    logger.info(f"Report written to {out} ({len(artifacts)} files, {len(missing)} absent inputs)")
    return artifacts
