"""Training loops: supervised training for the large networks and
teacher-student distillation for the compact one.

An epoch is one pass over the post-augmentation training set (mixup doubles
it).  Batches run sequentially; every epoch derives its own rng stream from
the master seed so runs with equal seeds are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lungsound.architectures import Model, save_model
from lungsound.nn.losses import (
    add_l2_gradients,
    cross_entropy_l2_loss,
    euclidean_embedding_grad,
    euclidean_embedding_loss,
    kl_div_l2_loss,
)
from lungsound.nn.store import TrainingError, adam_step
from lungsound.patches import MixupConfig, Patch, mixup_batch, patch_tensor

DISTILL_GAMMA = 0.5


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-4
    loss: str = "auto"  # auto | cross_entropy | kl
    l2_lambda: float = 1e-4
    seed: int = 0
    track_accuracy: bool = False
    early_stop_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch size must be at least 2, got {self.batch_size}")
        if self.loss not in ("auto", "cross_entropy", "kl"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def resolve_loss(self, mixup_enabled: bool) -> str:
        if self.loss != "auto":
            return self.loss
        # soft mixup labels need the KL form; hard labels use cross entropy
        return "kl" if mixup_enabled else "cross_entropy"


@dataclass
class EpochStats:
    epoch: int
    loss: float
    data_term: float
    l2_term: float
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "epoch": self.epoch,
            "loss": self.loss,
            "data_term": self.data_term,
            "l2_term": self.l2_term,
        }
        row.update(self.extra)
        return row


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def predict_posteriors(model: Model, patches: list[Patch], batch_size: int = 100) -> np.ndarray:
    """Evaluation-mode class posteriors for every patch, in order."""
    if not patches:
        raise ValueError("no patches to predict")
    out = []
    for start in range(0, len(patches), batch_size):
        x, _ = patch_tensor(patches[start : start + batch_size], model.n_classes)
        out.append(model.forward(x, train=False))
    return np.concatenate(out, axis=0)


def training_accuracy(model: Model, patches: list[Patch], batch_size: int = 100) -> float:
    """Fraction of patches whose argmax posterior matches the argmax label."""
    probs = predict_posteriors(model, patches, batch_size)
    _, labels = patch_tensor(patches, model.n_classes)
    return float(np.mean(probs.argmax(axis=1) == labels.argmax(axis=1)))


def train(
    model: Model,
    patches: list[Patch],
    cfg: TrainConfig,
    mixup: MixupConfig | None = None,
    checkpoint_path=None,
    log=None,
) -> list[EpochStats]:
    """Supervised training with Adam; returns per-epoch loss history."""
    if len(patches) < 2:
        raise TrainingError(f"need at least 2 training patches, got {len(patches)}")
    mixup_on = mixup is not None and mixup.enabled
    loss_name = cfg.resolve_loss(mixup_on)
    loss_fn = kl_div_l2_loss if loss_name == "kl" else cross_entropy_l2_loss
    history: list[EpochStats] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = _epoch_rng(cfg.seed, epoch)
        model.set_rng(rng)
        stats: dict[str, int] = {}
        data = mixup_batch(patches, mixup, rng, stats) if mixup_on else patches
        order = rng.permutation(len(data))
        totals = np.zeros(3)
        n_batches = 0
        clamped = 0
        for idx in _batches(len(data), cfg.batch_size, order):
            if idx.size < 2:
                # batch norm needs two items; the one-sample tail is dropped,
                # a different sample each epoch because of the shuffle
                continue
            batch = [data[i] for i in idx]
            x, y = patch_tensor(batch, model.n_classes)
            model.store.zero_grad()
            probs = model.forward(x, train=True)
            loss, dprobs = loss_fn(probs, y, model.store, cfg.l2_lambda)
            if not np.isfinite(loss.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}: "
                    f"data={loss.data_term!r} l2={loss.l2_term!r}"
                )
            model.backward(dprobs)
            add_l2_gradients(model.store, cfg.l2_lambda)
            step += 1
            adam_step(model.store, cfg.lr, step)
            totals += (loss.total, loss.data_term, loss.l2_term)
            clamped += int(loss.clamped)
            n_batches += 1
        if n_batches == 0:
            raise TrainingError("no usable batches this epoch")
        extra = {"loss_name": loss_name, "clamped_batches": clamped}
        extra.update(stats)
        if cfg.track_accuracy or cfg.early_stop_accuracy is not None:
            extra["train_accuracy"] = training_accuracy(model, patches, cfg.batch_size)
        entry = EpochStats(
            epoch,
            float(totals[0] / n_batches),
            float(totals[1] / n_batches),
            float(totals[2] / n_batches),
            extra,
        )
        history.append(entry)
        if log is not None:
            log(entry)
        acc = extra.get("train_accuracy")
        if cfg.early_stop_accuracy is not None and acc is not None and acc >= cfg.early_stop_accuracy:
            break
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
    return history


def distill(
    teacher: Model,
    student: Model,
    patches: list[Patch],
    cfg: TrainConfig,
    gamma: float = DISTILL_GAMMA,
    checkpoint_path=None,
    log=None,
) -> list[EpochStats]:
    """Train the student to match labels and the frozen teacher's embedding.

    The loss is cross entropy (with its L2 term) plus gamma times the mean
    Euclidean distance between teacher and student embeddings.
    """
    if len(patches) < 2:
        raise TrainingError(f"need at least 2 training patches, got {len(patches)}")
    history: list[EpochStats] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = _epoch_rng(cfg.seed, epoch)
        student.set_rng(rng)
        order = rng.permutation(len(patches))
        totals = np.zeros(4)  # total, ce data, l2, euclid
        n_batches = 0
        for idx in _batches(len(patches), cfg.batch_size, order):
            if idx.size < 2:
                continue
            batch = [patches[i] for i in idx]
            x, y = patch_tensor(batch, student.n_classes)
            t_probs, t_emb = teacher.forward(x, train=False, want_embedding=True)
            del t_probs
            student.store.zero_grad()
            s_probs, s_emb = student.forward(x, train=True, want_embedding=True)
            if t_emb.shape != s_emb.shape:
                raise TrainingError(
                    f"embedding width mismatch: teacher {t_emb.shape[1]} vs "
                    f"student {s_emb.shape[1]}"
                )
            ce, dprobs = cross_entropy_l2_loss(s_probs, y, student.store, cfg.l2_lambda)
            euclid = euclidean_embedding_loss(t_emb, s_emb)
            total = ce.total + gamma * euclid
            if not np.isfinite(total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}: "
                    f"ce={ce.total!r} euclid={euclid!r}"
                )
            d_emb = gamma * euclidean_embedding_grad(t_emb, s_emb)
            student.backward(dprobs, d_embedding=d_emb.astype(s_emb.dtype))
            add_l2_gradients(student.store, cfg.l2_lambda)
            step += 1
            adam_step(student.store, cfg.lr, step)
            totals += (total, ce.data_term, ce.l2_term, euclid)
            n_batches += 1
        if n_batches == 0:
            raise TrainingError("no usable batches this epoch")
        extra = {
            "euclid_term": float(totals[3] / n_batches),
            "gamma": gamma,
            "loss_name": "cross_entropy+euclid",
        }
        if cfg.track_accuracy or cfg.early_stop_accuracy is not None:
            extra["train_accuracy"] = training_accuracy(student, patches, cfg.batch_size)
        entry = EpochStats(
            epoch,
            float(totals[0] / n_batches),
            float(totals[1] / n_batches),
            float(totals[2] / n_batches),
            extra,
        )
        history.append(entry)
        if log is not None:
            log(entry)
        acc = extra.get("train_accuracy")
        if cfg.early_stop_accuracy is not None and acc is not None and acc >= cfg.early_stop_accuracy:
            break
    if checkpoint_path is not None:
        save_model(student, checkpoint_path)
    return history
