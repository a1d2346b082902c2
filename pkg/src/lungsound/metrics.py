"""Evaluation: posterior aggregation, confusion matrices, and the challenge
scores (sensitivity, specificity, and their average) for both tasks.

Task 1 scores cycle-level anomaly classification over (Crackle, Wheeze, Both,
Normal); Task 2 scores recording-level disease groups (Chronic, Non-Chronic,
Healthy).  Each task has two sensitivity readings: the strict variant demands
the exact class, the relaxed variant accepts any confusion inside the
unhealthy classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASK1_CLASSES = ("crackle", "wheeze", "both", "normal")
TASK2_CLASSES = ("chronic", "non_chronic", "healthy")
SUBTASKS = ("1-1", "1-2", "2-1", "2-2")


class MetricError(ValueError):
    pass


def class_names(task: int) -> tuple[str, ...]:
    if task == 1:
        return TASK1_CLASSES
    if task == 2:
        return TASK2_CLASSES
    raise MetricError(f"unknown task {task}")


def aggregate_posteriors(probs: np.ndarray) -> np.ndarray:
    """Mean posterior over an instance's patches: (P, C) -> (C,)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise MetricError(f"expected a non-empty (patches, classes) array, got {probs.shape}")
    return probs.mean(axis=0)


def predict_label(posterior: np.ndarray) -> int:
    """Argmax class index; ties resolve to the lowest index."""
    posterior = np.asarray(posterior)
    if posterior.ndim != 1:
        raise MetricError(f"expected a 1-D posterior, got shape {posterior.shape}")
    return int(np.argmax(posterior))


@dataclass
class ConfusionMatrix:
    """Square count matrix indexed [true class][predicted class]."""

    task: int
    counts: np.ndarray

    @classmethod
    def empty(cls, task: int) -> "ConfusionMatrix":
        c = len(class_names(task))
        return cls(task, np.zeros((c, c), dtype=np.int64))

    @classmethod
    def from_pairs(cls, task: int, pairs) -> "ConfusionMatrix":
        cm = cls.empty(task)
        for true_idx, pred_idx in pairs:
            cm.add(true_idx, pred_idx)
        return cm

    def __post_init__(self):
        c = len(class_names(self.task))
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (c, c):
            raise MetricError(f"task {self.task} confusion matrix must be {c}x{c}")

    @property
    def class_names(self) -> tuple[str, ...]:
        return class_names(self.task)

    def add(self, true_idx: int, pred_idx: int, n: int = 1) -> None:
        self.counts[true_idx, pred_idx] += n

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionMatrix)
            and self.task == other.task
            and bool(np.array_equal(self.counts, other.counts))
        )


def _check_subtask(cm: ConfusionMatrix, subtask: str) -> None:
    if subtask not in SUBTASKS:
        raise MetricError(f"unknown subtask {subtask!r}, expected one of {SUBTASKS}")
    if int(subtask[0]) != cm.task:
        raise MetricError(f"subtask {subtask} does not apply to a task {cm.task} matrix")


def sensitivity(cm: ConfusionMatrix, subtask: str) -> float:
    _check_subtask(cm, subtask)
    counts = cm.counts
    rows = cm.row_totals()
    if cm.task == 1:
        sick = (0, 1, 2)  # crackle, wheeze, both
    else:
        sick = (0, 1)  # chronic, non-chronic
    denom = int(rows[list(sick)].sum())
    if denom == 0:
        raise MetricError(f"sensitivity undefined for subtask {subtask}: no unhealthy instances")
    if subtask in ("1-1", "2-1"):
        hit = sum(int(counts[i, i]) for i in sick)
    else:
        # relaxed: any unhealthy prediction counts for an unhealthy truth
        hit = int(counts[np.ix_(sick, sick)].sum())
    return hit / denom


def specificity(cm: ConfusionMatrix, subtask: str) -> float:
    _check_subtask(cm, subtask)
    healthy = 3 if cm.task == 1 else 2
    denom = int(cm.row_totals()[healthy])
    if denom == 0:
        raise MetricError(f"specificity undefined for subtask {subtask}: no healthy instances")
    return int(cm.counts[healthy, healthy]) / denom


def icbhi_score(sens: float, spec: float) -> float:
    """The challenge's headline number: the plain average of the two rates."""
    return (sens + spec) / 2.0


@dataclass(frozen=True)
class ScoreTriple:
    sensitivity: float
    specificity: float
    score: float


def make_score_triple(sens: float, spec: float) -> ScoreTriple:
    return ScoreTriple(sens, spec, icbhi_score(sens, spec))


def subtask_scores(cm: ConfusionMatrix, subtask: str) -> ScoreTriple:
    return make_score_triple(sensitivity(cm, subtask), specificity(cm, subtask))


def all_subtask_scores(cm: ConfusionMatrix) -> dict[str, ScoreTriple]:
    wanted = [s for s in SUBTASKS if int(s[0]) == cm.task]
    return {s: subtask_scores(cm, s) for s in wanted}


def pool_confusions(cms: list[ConfusionMatrix]) -> ConfusionMatrix:
    """Sum per-fold confusion matrices into one pooled matrix (the default
    cross-validation aggregation)."""
    if not cms:
        raise MetricError("no confusion matrices to pool")
    task = cms[0].task
    pooled = ConfusionMatrix.empty(task)
    for cm in cms:
        if cm.task != task:
            raise MetricError("cannot pool confusion matrices from different tasks")
        pooled.counts += cm.counts
    return pooled


def mean_fold_scores(triples: list[ScoreTriple]) -> ScoreTriple:
    """Alternative aggregation: average per-fold score triples."""
    if not triples:
        raise MetricError("no fold scores to average")
    sens = float(np.mean([t.sensitivity for t in triples]))
    spec = float(np.mean([t.specificity for t in triples]))
    return make_score_triple(sens, spec)
