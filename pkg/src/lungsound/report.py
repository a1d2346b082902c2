"""Rendering of results: delimited confusion tables (with a strict parser so
documents round-trip), JSON results documents, training-history logs, and
matplotlib figures saved next to the delimited output.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from lungsound.metrics import (
    ConfusionMatrix,
    MetricError,
    ScoreTriple,
    all_subtask_scores,
)

RESULTS_SCHEMA_VERSION = 1
UNDEFINED = "undefined"


def safe_scores(cm: ConfusionMatrix) -> dict[str, ScoreTriple | None]:
    """Per-subtask scores, with None where a denominator is empty."""
    out: dict[str, ScoreTriple | None] = {}
    for subtask in ("1-1", "1-2") if cm.task == 1 else ("2-1", "2-2"):
        try:
            out[subtask] = all_subtask_scores(cm)[subtask]
        except MetricError:
            out[subtask] = None
    return out


def render_confusion(
    cm: ConfusionMatrix, scores: dict[str, ScoreTriple | None] | None = None
) -> str:
    """Tab-delimited table: counts with row/column totals, then score rows."""
    names = cm.class_names
    lines = [f"task\t{cm.task}"]
    lines.append("header\ttrue\\pred\t" + "\t".join(names) + "\ttotal")
    for i, name in enumerate(names):
        cells = "\t".join(str(int(c)) for c in cm.counts[i])
        lines.append(f"row\t{name}\t{cells}\t{int(cm.counts[i].sum())}")
    col = "\t".join(str(int(c)) for c in cm.counts.sum(axis=0))
    lines.append(f"col_total\t\t{col}\t{cm.total()}")
    if scores is not None:
        lines.append("score_header\tsubtask\tsensitivity\tspecificity\ticbhi_score")
        for subtask, triple in scores.items():
            if triple is None:
                lines.append(f"score\t{subtask}\t{UNDEFINED}\t{UNDEFINED}\t{UNDEFINED}")
            else:
                lines.append(
                    f"score\t{subtask}\t{triple.sensitivity:.6f}"
                    f"\t{triple.specificity:.6f}\t{triple.score:.6f}"
                )
    return "\n".join(lines) + "\n"


def parse_confusion(text: str) -> ConfusionMatrix:
    """Invert render_confusion back to the count matrix (totals are checked)."""
    task = None
    rows: list[list[int]] = []
    names: list[str] = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        cols = raw.split("\t")
        kind = cols[0]
        if kind == "task":
            task = int(cols[1])
        elif kind == "row":
            names.append(cols[1])
            *cells, total = [int(c) for c in cols[2:]]
            if sum(cells) != total:
                raise ValueError(f"row total mismatch for {cols[1]!r}")
            rows.append(cells)
    if task is None or not rows:
        raise ValueError("not a confusion table")
    cm = ConfusionMatrix(task, np.array(rows, dtype=np.int64))
    if list(cm.class_names) != names:
        raise ValueError(f"unexpected class names {names}")
    return cm


def results_document(
    config_resolved: dict,
    config_hash: str,
    cm: ConfusionMatrix,
    scores: dict[str, ScoreTriple | None],
    split_scheme: str,
    extra: dict | None = None,
) -> dict:
    doc = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "task": cm.task,
        "split_scheme": split_scheme,
        "seed": config_resolved.get("seed"),
        "config": config_resolved,
        "config_hash": config_hash,
        "class_names": list(cm.class_names),
        "confusion": cm.counts.tolist(),
        "scores": {
            k: (
                None
                if v is None
                else {
                    "sensitivity": v.sensitivity,
                    "specificity": v.specificity,
                    "icbhi_score": v.score,
                }
            )
            for k, v in scores.items()
        },
    }
    if extra:
        doc.update(extra)
    return doc


def save_results(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_results(path) -> dict:
    return json.loads(Path(path).read_text())


def write_history(path, history) -> None:
    """Per-epoch training log as a tab-delimited file."""
    keys: list[str] = []
    rows = [h.as_row() for h in history]
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    lines = ["\t".join(keys)]
    for row in rows:
        lines.append("\t".join(_fmt(row.get(k)) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def confusion_figure(cm: ConfusionMatrix, path) -> Path:
    """Heatmap of the count matrix with per-cell annotations."""
    names = cm.class_names
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 1.2 * len(names) + 1.5))
    im = ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"Task {cm.task} confusion matrix")
    vmax = max(1, int(cm.counts.max()))
    for i in range(len(names)):
        for j in range(len(names)):
            v = int(cm.counts[i, j])
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > vmax / 2 else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def score_figure(scores: dict[str, ScoreTriple | None], path, title: str = "") -> Path:
    """Grouped bars: sensitivity, specificity, and score per subtask."""
    subtasks = [k for k, v in scores.items() if v is not None]
    fig, ax = plt.subplots(figsize=(2.0 * max(1, len(subtasks)) + 2, 4))
    width = 0.25
    xs = np.arange(len(subtasks))
    for off, (field, label) in enumerate(
        [("sensitivity", "sensitivity"), ("specificity", "specificity"), ("score", "score")]
    ):
        vals = [getattr(scores[s], field) for s in subtasks]
        ax.bar(xs + (off - 1) * width, vals, width, label=label)
    ax.set_xticks(xs, [f"task {s}" for s in subtasks])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("rate")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def grid_figure(rows: list[dict], path, title: str = "factor grid") -> Path:
    """Bar chart of the headline score per grid point.

    Each row needs "label" and "score" keys (score may be None).
    """
    labels = [r["label"] for r in rows]
    vals = [r["score"] if r["score"] is not None else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows) + 2), 4))
    ax.bar(range(len(rows)), vals, color="tab:blue")
    ax.set_xticks(range(len(rows)), labels, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
