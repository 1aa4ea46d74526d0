"""
Helper Utilities
Seeding, derived RNG streams, timestamps, CSV / PDF export and formatting.
"""

import hashlib
import logging
import os
import random
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

logger = logging.getLogger(__name__)


# ==================== SEEDING ====================

def set_global_seed(seed: int) -> None:
    """Seed python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def derive_seed(seed: int, *keys: Any) -> int:
    """
    Derive an independent 63-bit seed from a base seed and stream keys.

    Args:
        seed: Base seed
        *keys: Stream identifiers (e.g. "restart", 3)

    Returns:
        int: Derived seed, stable across processes and platforms
    """
    text = ":".join([str(seed), *[str(k) for k in keys]])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big") >> 1


def torch_generator(seed: int, *keys: Any) -> torch.Generator:
    """CPU torch.Generator seeded from (seed, *keys)."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(seed, *keys) if keys else seed)
    return gen


def sample_latents(
    n: int,
    latent_dim: int,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """z ~ N(0, I_d), drawn from an explicit generator."""
    return torch.randn(n, latent_dim, generator=generator, dtype=dtype)


# ==================== TIMESTAMP / PATH UTILITIES ====================

def format_timestamp(dt: Optional[datetime] = None) -> str:
    """
    Format datetime to ISO 8601 with Z suffix.

    Args:
        dt: Datetime (defaults to now, UTC)

    Returns:
        str: ISO formatted timestamp
    """
    if dt is None:
        dt = datetime.now(timezone.utc)
    return dt.replace(tzinfo=None).isoformat() + "Z"


def ensure_directory(path: Union[str, Path]) -> Path:
    """Create a directory (and parents) if it doesn't exist."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def format_duration(seconds: float) -> str:
    """
    Format duration in human-readable form.

    Args:
        seconds: Duration in seconds

    Returns:
        str: e.g. "1h 5m", "3m 12s", "4.2s"
    """
    if seconds < 60:
        return f"{seconds:.1f}s"
    if seconds < 3600:
        minutes, secs = divmod(int(seconds), 60)
        return f"{minutes}m {secs}s"
    hours, rem = divmod(int(seconds), 3600)
    return f"{hours}h {rem // 60}m"


# ==================== EXPORT UTILITIES ====================

def export_to_csv(
    data: List[Dict[str, Any]],
    output_path: Union[str, Path],
    fieldnames: Optional[Sequence[str]] = None,
) -> Path:
    """
    Export rows to a CSV file.

    Args:
        data: List of dictionaries to export
        output_path: Output file path
        fieldnames: Column order (inferred from the first row if None)

    Returns:
        Path: Path to created CSV file
    """
    output_path = Path(output_path)
    logger.info(f"Exporting {len(data)} records to CSV: {output_path}")

    try:
        ensure_directory(output_path.parent)
        frame = pd.DataFrame(data)
        if fieldnames is not None:
            frame = frame.reindex(columns=list(fieldnames))
        frame.to_csv(output_path, index=False)
        return output_path
    except Exception as e:
        logger.error(f"CSV export failed: {e}", exc_info=True)
        raise


def _styled_table(rows: List[List[str]]) -> Table:
    table = Table(rows)
    table.setStyle(TableStyle([
        ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#1a73e8")),
        ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
        ("ALIGN", (0, 0), (-1, -1), "LEFT"),
        ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
        ("FONTSIZE", (0, 0), (-1, -1), 8),
        ("BOTTOMPADDING", (0, 0), (-1, 0), 6),
        ("BACKGROUND", (0, 1), (-1, -1), colors.beige),
        ("GRID", (0, 0), (-1, -1), 0.5, colors.black),
    ]))
    return table


def save_report_pdf(
    sections: List[Dict[str, Any]],
    output_path: Union[str, Path],
    title: str = "Experiment Report",
) -> Path:
    """
    Render a PDF summary.

    Each section is a dict with a "heading" and any of: "text" (str),
    "table" (pandas DataFrame) and "image" (path to a PNG).

    Args:
        sections: Ordered report sections
        output_path: Output PDF path
        title: Report title

    Returns:
        Path: Path to created PDF
    """
    output_path = Path(output_path)
    logger.info(f"Generating PDF report: {output_path}")

    try:
        ensure_directory(output_path.parent)
        doc = SimpleDocTemplate(
            str(output_path),
            pagesize=letter,
            rightMargin=54,
            leftMargin=54,
            topMargin=54,
            bottomMargin=18,
        )
        styles = getSampleStyleSheet()
        title_style = ParagraphStyle(
            "ReportTitle",
            parent=styles["Heading1"],
            fontSize=20,
            textColor=colors.HexColor("#1a73e8"),
            spaceAfter=20,
            alignment=TA_CENTER,
        )
        heading_style = ParagraphStyle(
            "ReportHeading",
            parent=styles["Heading2"],
            fontSize=14,
            textColor=colors.HexColor("#1a73e8"),
            spaceAfter=10,
            spaceBefore=10,
        )

        story = [Paragraph(title, title_style), Spacer(1, 0.2 * inch)]
        for section in sections:
            story.append(Paragraph(section["heading"], heading_style))
            if section.get("text"):
                story.append(Paragraph(section["text"], styles["Normal"]))
                story.append(Spacer(1, 0.1 * inch))
            frame = section.get("table")
            if frame is not None and not frame.empty:
                rows = [[str(c) for c in frame.columns]]
                rows += [[_cell(v) for v in record] for record in frame.itertuples(index=False)]
                story.append(_styled_table(rows))
                story.append(Spacer(1, 0.2 * inch))
            image = section.get("image")
            if image and Path(image).exists():
                story.append(Image(str(image), width=5 * inch, height=3.5 * inch))
                story.append(Spacer(1, 0.2 * inch))

        doc.build(story)
        logger.info(f"PDF report generated: {output_path}")
        return output_path
    except Exception as e:
        logger.error(f"PDF generation failed: {e}", exc_info=True)
        raise


def _cell(value: Any) -> str:
    if isinstance(value, float):
        if np.isnan(value):
            return "absent"
        return f"{value:.4f}"
    return str(value)


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write text to a temp sibling and rename into place."""
    path = Path(path)
    ensure_directory(path.parent)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path
