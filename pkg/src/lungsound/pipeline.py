"""Glue between the corpus index, front-ends, patching, and evaluation.

Task 1 instances are respiratory cycles (four classes); Task 2 instances are
whole recordings (three disease groups).  Features are cached per
(instance, front-end) as binary files; a corrupt cache entry is recomputed
with a warning rather than failing the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from lungsound import icbhi
from lungsound.architectures import Model
from lungsound.frontends import (
    CacheError,
    FrontendConfig,
    Spectrogram,
    cache_is_valid,
    compute_frontend,
    load_feature,
    resample,
    save_feature,
)
from lungsound.metrics import ConfusionMatrix, aggregate_posteriors, predict_label
from lungsound.patches import Patch, split_patches
from lungsound.training import predict_posteriors


def task_classes(task: int) -> int:
    if task == 1:
        return 4
    if task == 2:
        return 3
    raise ValueError(f"unknown task {task}")


@dataclass
class Instance:
    """One scoring unit: a cycle (task 1) or a recording (task 2)."""

    instance_id: str
    recording_id: str
    cycle_index: int | None
    label_index: int
    spectrogram: Spectrogram


@dataclass
class FeatureStats:
    computed: int = 0
    loaded: int = 0
    recomputed: int = 0
    warnings: list[str] = field(default_factory=list)


def cache_path(cache_dir, recording_id: str, frontend: str, cycle_index: int | None = None):
    stem = recording_id if cycle_index is None else f"{recording_id}.c{cycle_index:03d}"
    return Path(cache_dir) / f"{stem}.{frontend}.lsfc"


def _cached_spec(path, make, frontend, stats: FeatureStats):
    """Load a valid cache entry, else (re)compute and store it."""
    if path is None:
        spec = make()
        stats.computed += 1
        return spec
    path = Path(path)
    if path.exists():
        if cache_is_valid(path, frontend):
            stats.loaded += 1
            return load_feature(path)
        stats.warnings.append(f"corrupt cache entry {path}, recomputing")
        stats.recomputed += 1
    else:
        stats.computed += 1
    spec = make()
    path.parent.mkdir(parents=True, exist_ok=True)
    save_feature(path, spec)
    return spec


def recording_instances(
    index: icbhi.DatasetIndex,
    recording_ids: list[str],
    task: int,
    frontend: str,
    cfg: FrontendConfig = FrontendConfig(),
    cache_dir=None,
    stats: FeatureStats | None = None,
) -> list[Instance]:
    """Build the scoring instances (with spectrograms) for a set of recordings."""
    if stats is None:
        stats = FeatureStats()
    out: list[Instance] = []
    for rec in recording_ids:
        if task == 1:
            clip = None
            for ci, ann in enumerate(index.cycles[rec]):
                path = cache_path(cache_dir, rec, frontend, ci) if cache_dir else None

                def make(rec=rec, ci=ci, ann=ann):
                    nonlocal clip
                    if clip is None:
                        clip = resample(icbhi.load_recording(index, rec))
                    cycle = icbhi.extract_cycle_audio(clip, ann, cycle_index=ci)
                    return compute_frontend(icbhi.tile_to_min_duration(cycle), frontend, cfg)

                spec = _cached_spec(path, make, frontend, stats)
                out.append(Instance(f"{rec}#c{ci:03d}", rec, ci, int(ann.label), spec))
        else:
            group = index.recording_group(rec)
            path = cache_path(cache_dir, rec, frontend) if cache_dir else None

            def make(rec=rec):
                return compute_frontend(resample(icbhi.load_recording(index, rec)), frontend, cfg)

            spec = _cached_spec(path, make, frontend, stats)
            out.append(Instance(rec, rec, None, int(group), spec))
    return out


def instance_patches(
    instances: list[Instance], width: int, overlap: float, task: int
) -> list[tuple[Instance, list[Patch]]]:
    n_classes = task_classes(task)
    return [
        (
            inst,
            split_patches(
                inst.spectrogram, width, overlap, n_classes, label_index=inst.label_index
            ),
        )
        for inst in instances
    ]


def flat_patches(pairs: list[tuple[Instance, list[Patch]]]) -> list[Patch]:
    return [p for _, plist in pairs for p in plist]


def evaluate_model(
    model: Model, pairs: list[tuple[Instance, list[Patch]]], task: int
) -> ConfusionMatrix:
    """Mean-posterior instance predictions tallied into a confusion matrix."""
    cm = ConfusionMatrix.empty(task)
    for inst, patches in pairs:
        probs = predict_posteriors(model, patches)
        cm.add(inst.label_index, predict_label(aggregate_posteriors(probs)))
    return cm


def populate_cache(
    index: icbhi.DatasetIndex,
    task: int,
    frontend: str,
    cache_dir,
    cfg: FrontendConfig = FrontendConfig(),
    recording_ids: list[str] | None = None,
) -> FeatureStats:
    """Ensure every (instance, frontend) cache file exists and is valid."""
    stats = FeatureStats()
    ids = sorted(index.recordings) if recording_ids is None else recording_ids
    recording_instances(index, ids, task, frontend, cfg, cache_dir, stats)
    return stats
