"""Named trainable parameters with gradients and Adam state."""

from __future__ import annotations

import numpy as np


class TrainingError(RuntimeError):
    pass


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


class ParamStore:
    """Ordered map name -> (value, gradient, Adam m, Adam v), shapes agreeing."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(np.asarray(value))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def squared_norm(self) -> float:
        return float(sum(np.vdot(p.value, p.value).real for p in self._params.values()))


def count_params(store: ParamStore) -> int:
    """Total number of trainable scalar parameters."""
    return sum(p.value.size for p in store._params.values())


def adam_step(
    store: ParamStore,
    lr: float,
    t: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update; ``t`` is the 1-based step number."""
    if t < 1:
        raise ValueError("Adam step number t is 1-based")
    for name, p in store.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1**t)
        v_hat = p.v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store
