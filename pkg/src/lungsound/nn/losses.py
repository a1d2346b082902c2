"""Training losses: cross-entropy and KL divergence with L2 regularization,
plus the Euclidean embedding distance used for teacher-student transfer.

Each classification loss returns the scalar breakdown together with the
gradient with respect to the predicted posteriors; the L2 term's parameter
gradient is applied separately via add_l2_gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lungsound.nn.store import ParamStore

LOG_CLAMP = 1e-12
DEFAULT_L2 = 1e-4


@dataclass(frozen=True)
class LossValue:
    total: float
    data_term: float
    l2_term: float
    l2_lambda: float
    clamped: bool = False


def l2_term(store: ParamStore | None, lam: float) -> float:
    if store is None or lam == 0.0:
        return 0.0
    return 0.5 * lam * store.squared_norm()


def add_l2_gradients(store: ParamStore, lam: float) -> None:
    """Accumulate d/dtheta of (lam/2)*||theta||^2 onto every parameter."""
    if lam == 0.0:
        return
    for _, p in store.items():
        p.grad += lam * p.value


def _check_probs(y_hat: np.ndarray, y: np.ndarray) -> None:
    if y_hat.shape != y.shape or y_hat.ndim != 2:
        raise ValueError(f"expected matching (N,C) arrays, got {y_hat.shape} and {y.shape}")


def cross_entropy_l2_loss(
    y_hat: np.ndarray,
    y: np.ndarray,
    store: ParamStore | None = None,
    lam: float = DEFAULT_L2,
) -> tuple[LossValue, np.ndarray]:
    """Batch-mean cross entropy plus L2 penalty.

    Log arguments are clamped at 1e-12; the returned LossValue flags whether
    the clamp fired.  The second return value is dL/dy_hat.
    """
    _check_probs(y_hat, y)
    n = y_hat.shape[0]
    clipped = np.maximum(y_hat, LOG_CLAMP)
    clamped = bool(np.any((y_hat < LOG_CLAMP) & (y > 0)))
    data = float(-(y * np.log(clipped)).sum() / n)
    reg = l2_term(store, lam)
    grad = -(y / clipped) / n
    return LossValue(data + reg, data, reg, lam, clamped), grad


def kl_div_l2_loss(
    y_hat: np.ndarray,
    y: np.ndarray,
    store: ParamStore | None = None,
    lam: float = DEFAULT_L2,
) -> tuple[LossValue, np.ndarray]:
    """KL divergence KL(y || y_hat) summed over the batch, plus L2 penalty.

    Terms with y == 0 contribute zero.  Returns (LossValue, dL/dy_hat).
    """
    _check_probs(y_hat, y)
    clipped = np.maximum(y_hat, LOG_CLAMP)
    clamped = bool(np.any((y_hat < LOG_CLAMP) & (y > 0)))
    pos = y > 0
    terms = np.zeros_like(y_hat)
    terms[pos] = y[pos] * (np.log(y[pos]) - np.log(clipped[pos]))
    data = float(terms.sum())
    reg = l2_term(store, lam)
    grad = np.where(pos, -y / clipped, 0.0)
    return LossValue(data + reg, data, reg, lam, clamped), grad


def euclidean_embedding_loss(emb_teacher: np.ndarray, emb_student: np.ndarray) -> float:
    """Batch mean of the Euclidean distance between paired embeddings."""
    if emb_teacher.shape != emb_student.shape or emb_teacher.ndim != 2:
        raise ValueError(
            f"embedding shapes disagree: {emb_teacher.shape} vs {emb_student.shape}"
        )
    return float(np.linalg.norm(emb_teacher - emb_student, axis=1).mean())


def euclidean_embedding_grad(emb_teacher: np.ndarray, emb_student: np.ndarray) -> np.ndarray:
    """Gradient of euclidean_embedding_loss with respect to the student."""
    diff = emb_student - emb_teacher
    norms = np.linalg.norm(diff, axis=1, keepdims=True)
    n = emb_student.shape[0]
    # distance is non-differentiable at zero; define the gradient there as 0
    safe = np.maximum(norms, 1e-12)
    return np.where(norms < 1e-12, 0.0, diff / (safe * n))
