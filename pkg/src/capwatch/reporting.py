"""Serialization of scenario results: CSV series, JSON metrics, SVG charts.

Output is part of the tool's contract: column order is fixed, floats are
written with 12 significant digits, and every artifact embeds the config
hash, seed, and tool version. Figures are rendered with matplotlib using
a deterministic hash salt so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .scenarios import ScenarioResult

__all__ = [
    "metrics_json_text",
    "render_figure",
    "series_csv_text",
    "write_outputs",
]


def _fmt(value: float) -> str:
    return f"{float(value):.12g}"


def series_csv_text(result: ScenarioResult) -> str:
    lines = [
        "# capwatch series",
        f"# scenario: {result.name}",
        f"# config_hash: {result.config_hash}",
        f"# seed: {result.seed}",
        f"# tool_version: {result.tool_version}",
        ",".join(result.columns),
    ]
    for row in result.table:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _plain(value):
    if value is None:
        return None
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def metrics_json_text(result: ScenarioResult) -> str:
    doc = {
        "scenario": result.name,
        "config_hash": result.config_hash,
        "seed": result.seed,
        "tool_version": result.tool_version,
        "metrics": {k: _plain(v) for k, v in result.metrics.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def render_figure(result: ScenarioResult, path) -> None:
    """Draw the series as line charts and save a deterministic SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    dynamic = "t" in result.columns
    with plt.rc_context({"svg.hashsalt": result.config_hash}):
        if dynamic:
            fig, axes = plt.subplots(2, 2, figsize=(9, 6), constrained_layout=True)
            t = result.column("t")
            panels = [
                ("budget", "budget per step"),
                ("frontier_sensitivity", "sensitivity at the true level"),
                ("bias_magnitude", "bias magnitude"),
                ("detection_likelihood", "detection likelihood at threshold"),
            ]
            for ax, (col, label) in zip(axes.flat, panels):
                ax.plot(t, result.column(col))
                ax.set_xlabel("step")
                ax.set_ylabel(label)
        else:
            fig, (left, right) = plt.subplots(
                1, 2, figsize=(9, 4), constrained_layout=True
            )
            y_t = result.column("y_t")
            left.plot(y_t, y_t, linestyle="--", color="gray", label="truth")
            left.plot(
                y_t, y_t - result.column("bias_magnitude"), label="expected estimate"
            )
            if "ensemble_mean_estimate" in result.columns:
                left.plot(
                    y_t,
                    result.column("ensemble_mean_estimate"),
                    linestyle=":",
                    label="ensemble mean",
                )
            left.set_xlabel("true level")
            left.set_ylabel("estimate")
            left.legend()
            right.plot(y_t, result.column("detection_likelihood"))
            if "ensemble_detection_rate" in result.columns:
                right.plot(
                    y_t, result.column("ensemble_detection_rate"), linestyle=":"
                )
            right.set_xlabel("true level")
            right.set_ylabel("detection likelihood")
        fig.suptitle(result.name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_outputs(result: ScenarioResult, out_dir, emit=("csv", "json")) -> list[Path]:
    """Write the requested artifacts for one result; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in emit:
        path = out / f"{result.name}.series.csv"
        path.write_text(series_csv_text(result))
        written.append(path)
    if "json" in emit:
        path = out / f"{result.name}.metrics.json"
        path.write_text(metrics_json_text(result))
        written.append(path)
    if "svg" in emit:
        path = out / f"{result.name}.svg"
        render_figure(result, path)
        written.append(path)
    return written
