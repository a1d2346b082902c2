"""Fixed-size spectrogram patches and mixup augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .frontends import N_BINS, Spectrogram
from .icbhi import CycleLabel

PATCH_WIDTHS = (32, 64, 96, 128, 160)


@dataclass
class Patch:
    """64 x W pixel window with a soft label on the probability simplex."""

    pixels: np.ndarray
    label: np.ndarray
    recording_id: str = ""
    cycle_index: Optional[int] = None
    patch_index: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.label = np.asarray(self.label, dtype=np.float32)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != N_BINS:
            raise ValueError(f"patch must be {N_BINS} x W, got {self.pixels.shape}")
        if np.any(self.label < 0) or abs(float(self.label.sum()) - 1.0) > 1e-5:
            raise ValueError("patch label must lie on the probability simplex")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def one_hot(index: int, n_classes: int) -> np.ndarray:
    y = np.zeros(n_classes, dtype=np.float32)
    y[index] = 1.0
    return y


def patch_starts(n_frames: int, width: int, overlap: float) -> list[int]:
    """Start frames for patches of ``width`` over ``n_frames`` (>= width).

    A trailing partial window is back-shifted so it ends exactly at the last
    frame; it may then overlap its predecessor by more than configured.
    """
    hop = int(width * (1.0 - overlap))
    if hop <= 0:
        raise ValueError(f"overlap {overlap} leaves no hop for width {width}")
    starts = list(range(0, n_frames - width + 1, hop))
    if starts[-1] + width < n_frames:
        starts.append(n_frames - width)
    return starts


def split_patches(
    spec: Spectrogram, width: int, overlap: float = 0.0, n_classes: int = 4,
    label_index: Optional[int] = None,
) -> list[Patch]:
    """Cut a spectrogram into 64 x ``width`` patches.

    ``overlap`` is 0 or 0.5.  Spectrograms shorter than ``width`` frames are
    tiled in time up to ``width`` first.  The patch label is the one-hot of
    ``label_index`` (default: the label carried by the spectrogram's source).
    """
    if overlap not in (0.0, 0.5):
        raise ValueError("overlap must be 0 or 0.5")
    values = spec.values
    if values.shape[1] < width:
        reps = -(-width // values.shape[1])
        values = np.tile(values, (1, reps))[:, :width]
    if label_index is None:
        label_index = spec.source.label
    if label_index is None:
        raise ValueError("no label available for patches (spectrogram source unlabeled)")
    label = one_hot(label_index, n_classes)
    out = []
    for i, start in enumerate(patch_starts(values.shape[1], width, overlap)):
        out.append(
            Patch(
                values[:, start : start + width],
                label.copy(),
                recording_id=spec.source.recording_id,
                cycle_index=spec.source.cycle_index,
                patch_index=i,
            )
        )
    return out


@dataclass(frozen=True)
class MixupConfig:
    enabled: bool = True
    distribution: str = "uniform"      # "uniform" or "beta"
    beta_a: float = 0.4
    beta_b: float = 0.4
    task_pairing: str = "random"       # "random" or "normal_vs_anomaly"

    def __post_init__(self):
        if self.distribution not in ("uniform", "beta"):
            raise ValueError(f"unknown mixup distribution {self.distribution!r}")
        if self.task_pairing not in ("random", "normal_vs_anomaly"):
            raise ValueError(f"unknown task pairing {self.task_pairing!r}")
        if self.distribution == "beta" and (self.beta_a <= 0 or self.beta_b <= 0):
            raise ValueError("beta parameters must be positive")


def draw_mixup_coeff(cfg: MixupConfig, rng: np.random.Generator) -> float:
    if cfg.distribution == "beta":
        return float(rng.beta(cfg.beta_a, cfg.beta_b))
    return float(rng.uniform(0.0, 1.0))


def mixup_pair(x1, y1, x2, y2, alpha: float):
    """Convex blends of a patch pair, both directions.

    Returns ((a*x1 + (1-a)*x2, a*y1 + (1-a)*y2), ((1-a)*x1 + a*x2, ...)).
    """
    x1, x2 = np.asarray(x1), np.asarray(x2)
    y1, y2 = np.asarray(y1), np.asarray(y2)
    if x1.shape != x2.shape or y1.shape != y2.shape:
        raise ValueError(f"mixup shape mismatch: {x1.shape} vs {x2.shape}")
    xm1 = alpha * x1 + (1.0 - alpha) * x2
    xm2 = (1.0 - alpha) * x1 + alpha * x2
    ym1 = alpha * y1 + (1.0 - alpha) * y2
    ym2 = (1.0 - alpha) * y1 + alpha * y2
    return (xm1, ym1), (xm2, ym2)


def _is_normal(patch: Patch) -> bool:
    return int(np.argmax(patch.label)) == int(CycleLabel.NORMAL)


def _mixed(p1: Patch, p2: Patch, cfg: MixupConfig, rng) -> list[Patch]:
    alpha = draw_mixup_coeff(cfg, rng)
    (xa, ya), (xb, yb) = mixup_pair(p1.pixels, p1.label, p2.pixels, p2.label, alpha)
    return [
        replace(p1, pixels=xa, label=ya),
        replace(p2, pixels=xb, label=yb),
    ]


def mixup_batch(
    patches: list[Patch],
    cfg: MixupConfig,
    rng: np.random.Generator,
    stats: Optional[dict] = None,
) -> list[Patch]:
    """Double a batch of one-hot patches with mixed pairs, then shuffle.

    ``random`` pairing mates a shuffled batch pairwise without replacement.
    ``normal_vs_anomaly`` always mates one Normal patch with one anomalous
    patch (Crackle, Wheeze, or Both) and never two anomalies together; if a
    batch has no Normal or no anomaly patches it passes through unchanged and
    ``stats["mixup_skipped_batches"]`` is bumped.
    """
    if not cfg.enabled or len(patches) < 2:
        return list(patches)

    generated: list[Patch] = []
    n_pairs = len(patches) // 2
    if cfg.task_pairing == "normal_vs_anomaly":
        normals = [p for p in patches if _is_normal(p)]
        anomalies = [p for p in patches if not _is_normal(p)]
        if not normals or not anomalies:
            if stats is not None:
                stats["mixup_skipped_batches"] = stats.get("mixup_skipped_batches", 0) + 1
            return list(patches)
        norm_order = rng.permutation(len(normals))
        anom_order = rng.permutation(len(anomalies))
        for i in range(n_pairs):
            p_norm = normals[norm_order[i % len(normals)]]
            p_anom = anomalies[anom_order[i % len(anomalies)]]
            generated.extend(_mixed(p_norm, p_anom, cfg, rng))
    else:
        order = rng.permutation(len(patches))
        for i in range(n_pairs):
            generated.extend(_mixed(patches[order[2 * i]], patches[order[2 * i + 1]], cfg, rng))

    out = list(patches) + generated
    shuffle = rng.permutation(len(out))
    return [out[i] for i in shuffle]


def patch_tensor(
    patches: list[Patch], n_classes: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stack patches into (N, 64, W, 1) inputs and (N, C) labels."""
    x = np.stack([p.pixels for p in patches]).astype(np.float32)[..., None]
    y = np.stack([p.label for p in patches]).astype(np.float32)
    if n_classes is not None and y.shape[1] != n_classes:
        raise ValueError(f"patches carry {y.shape[1]}-class labels, expected {n_classes}")
    return x, y
