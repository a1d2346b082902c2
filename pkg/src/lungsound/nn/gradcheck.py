"""Central finite-difference gradient checking.

Meant for float64 micro-instances (a few hundred parameters): the loss is
re-evaluated twice per scalar, so keep the networks small.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from lungsound.nn.store import ParamStore

DEFAULT_H = 1e-5


def fd_gradient(loss_fn: Callable[[], float], value: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """Numerical dL/dvalue via central differences, perturbing in place."""
    grad = np.zeros_like(value)
    flat = value.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn()
        flat[i] = orig - h
        f_minus = loss_fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def fd_param_gradients(
    loss_fn: Callable[[], float], store: ParamStore, h: float = DEFAULT_H
) -> dict[str, np.ndarray]:
    return {name: fd_gradient(loss_fn, p.value, h) for name, p in store.items()}


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative disagreement between two gradient tensors."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def max_param_rel_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    if set(analytic) != set(numeric):
        raise ValueError("gradient dictionaries cover different parameters")
    return max(rel_error(analytic[k], numeric[k]) for k in analytic)
