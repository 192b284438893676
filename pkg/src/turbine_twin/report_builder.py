from __future__ import annotations

import json
from datetime import datetime
from datetime import timezone as _timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from jinja2 import Environment, FileSystemLoader, select_autoescape  # noqa: E402

from .config import get_settings  # noqa: E402
from .scada_ingest import TIMESTAMP_COLUMN, format_timestamps  # noqa: E402


def write_json_report(payload: Mapping[str, Any], output_path: Path) -> Path:
    document = {"generated_at": datetime.now(_timezone.utc).isoformat(), **payload}
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
    return output_path


def write_json_lines(rows: Iterable[Mapping[str, Any]], output_path: Path) -> Path:
    """One JSON object per line, keys in insertion order."""

    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return output_path


def read_json_lines(path: Path) -> List[Dict[str, Any]]:
    if not path.exists():
        return []
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_residuals(
    timestamps: pd.DatetimeIndex,
    residuals: Mapping[str, np.ndarray],
    limits: Mapping[str, float],
    output_dir: Path,
    prefix: str = "residual",
) -> List[Path]:
    """Writes ``<prefix>_<channel>.png`` and the matching ``.csv`` per channel."""

    output_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    stamps = format_timestamps(timestamps)
    for channel, values in residuals.items():
        limit = limits.get(channel)
        table = pd.DataFrame({TIMESTAMP_COLUMN: stamps, "residual": values})
        if limit is not None:
            table["threshold"] = limit
        csv_path = output_dir / f"{prefix}_{channel}.csv"
        table.to_csv(csv_path, index=False)

        fig, ax = plt.subplots(figsize=(12, 3.5))
        ax.plot(timestamps, values, linewidth=0.6, label="squared residual")
        if limit is not None:
            ax.axhline(limit, color="tab:red", linestyle="--", linewidth=1.0, label="threshold D")
        ax.set_title(channel)
        ax.set_ylabel("MSE (normalized)")
        ax.legend(loc="upper left")
        fig.autofmt_xdate()
        png_path = output_dir / f"{prefix}_{channel}.png"
        fig.savefig(png_path, dpi=110, bbox_inches="tight")
        plt.close(fig)
        written.extend([png_path, csv_path])
    return written


def plot_attributions(table: pd.DataFrame, output_path: Path, title: str) -> List[Path]:
    """Strip plot of per-feature attributions plus the CSV it was drawn from."""

    output_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = output_path.with_suffix(".csv")
    table.to_csv(csv_path, index=False)
    features = [column for column in table.columns if column != TIMESTAMP_COLUMN]
    fig, ax = plt.subplots(figsize=(8, 0.5 * len(features) + 1.5))
    rng = np.random.default_rng(0)
    for position, feature in enumerate(features):
        values = table[feature].to_numpy(dtype=np.float64)
        jitter = rng.uniform(-0.2, 0.2, size=len(values))
        ax.scatter(values, position + jitter, s=6, alpha=0.6)
    ax.set_yticks(range(len(features)))
    ax.set_yticklabels(features)
    ax.axvline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("SHAP value (normalized output)")
    ax.set_title(title)
    png_path = output_path.with_suffix(".png")
    fig.savefig(png_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return [png_path, csv_path]


def write_html_report(
    summary: Mapping[str, Any],
    events: List[Mapping[str, Any]],
    output_path: Path,
    turbine: str,
    plots: Optional[List[str]] = None,
    templates_dir: Optional[Path] = None,
) -> Path:
    env = Environment(
        loader=FileSystemLoader(templates_dir or get_settings().templates_dir),
        autoescape=select_autoescape(["html", "xml"]),
    )
    template = env.get_template("report.html.j2")
    rendered = template.render(
        turbine=turbine,
        summary=summary,
        events=events,
        plots=plots or [],
        generated=datetime.now(_timezone.utc),
    )
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8") as fh:
        fh.write(rendered)
    return output_path
