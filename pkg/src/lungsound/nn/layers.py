"""Neural network layers with explicit forward and backward passes.

All image-like activations use NHWC layout (batch, height, width, channels);
dense activations are (batch, features).  Every layer caches what its backward
pass needs during forward and accumulates parameter gradients into the shared
ParamStore.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lungsound.nn.store import ParamStore


class Layer:
    """Base class: forward(x, train) then backward(dy) in reverse order."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    scale = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * scale).astype(dtype)


def _im2col(xp: np.ndarray) -> np.ndarray:
    # xp: padded (N, H+2, W+2, C) -> (N*H*W, 9*C), kernel-position major
    n, hp, wp, c = xp.shape
    h, w = hp - 2, wp - 2
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)
    return np.ascontiguousarray(cols)


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero same-padding, implemented as im2col
    plus a single matrix multiply (and the transposed pair going backward)."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.w = store.add(name + ".w", he_normal(rng, (3, 3, c_in, c_out), 9 * c_in, dtype))
        self.b = store.add(name + ".b", np.zeros(c_out, dtype=dtype))
        self._xp = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ValueError(f"{self.name}: expected (N,H,W,{self.c_in}), got {x.shape}")
        n, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        self._xp = xp
        cols = _im2col(xp)
        wmat = self.w.value.reshape(9 * self.c_in, self.c_out)
        y = cols @ wmat + self.b.value
        return y.reshape(n, h, w, self.c_out)

    def backward(self, dy):
        xp = self._xp
        n, hp, wp, c = xp.shape
        h, w = hp - 2, wp - 2
        dy_flat = dy.reshape(n * h * w, self.c_out)
        cols = _im2col(xp)
        self.w.grad += (cols.T @ dy_flat).reshape(3, 3, self.c_in, self.c_out)
        self.b.grad += dy_flat.sum(axis=0)
        wmat = self.w.value.reshape(9 * self.c_in, self.c_out)
        dcols = (dy_flat @ wmat.T).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                dxp[:, di : di + h, dj : dj + w, :] += dcols[:, :, :, di, dj, :]
        self._xp = None
        return dxp[:, 1:-1, 1:-1, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over all non-channel axes.

    Training uses batch statistics and updates exponential running estimates;
    evaluation normalizes with the running estimates.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        channels: int,
        momentum: float = 0.99,
        eps: float = 1e-5,
        dtype=np.float32,
    ):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = store.add(name + ".gamma", np.ones(channels, dtype=dtype))
        self.beta = store.add(name + ".beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train=False):
        if x.shape[-1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        if train:
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: training batch must hold at least 2 items")
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mu).astype(x.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(x.dtype)
            self._cache = (xhat, inv, True)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = (xhat, inv, False)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, inv, trained = self._cache
        axes = tuple(range(dy.ndim - 1))
        if not trained:
            # running stats are constants here, so the chain is elementwise
            self.gamma.grad += (dy * xhat).sum(axis=axes)
            self.beta.grad += dy.sum(axis=axes)
            self._cache = None
            return dy * self.gamma.value * inv
        self.gamma.grad += (dy * xhat).sum(axis=axes)
        self.beta.grad += dy.sum(axis=axes)
        m = dy.size // dy.shape[-1]
        dxhat = dy * self.gamma.value
        term = m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        self._cache = None
        return (inv / m) * term


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        dy = dy * self._mask
        self._mask = None
        return dy


class AvgPool(Layer):
    """Non-overlapping k x k average pooling; spatial dims must divide k."""

    def __init__(self, k: int):
        self.k = k

    def forward(self, x, train=False):
        k = self.k
        n, h, w, c = x.shape
        if h % k or w % k:
            raise ValueError(f"average pool {k}x{k} needs dims divisible by {k}, got {h}x{w}")
        self._shape = x.shape
        return x.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def backward(self, dy):
        k = self.k
        n, h, w, c = self._shape
        d = np.broadcast_to(
            dy[:, :, None, :, None, :] / (k * k), (n, h // k, k, w // k, k, c)
        )
        return d.reshape(n, h, w, c).copy()


class GlobalAvgPool(Layer):
    """Average each channel over the full spatial extent: (N,H,W,C) -> (N,C)."""

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n, h, w, c = self._shape
        return np.broadcast_to(dy[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dropout(Layer):
    """Inverted dropout: kept activations are scaled by 1/(1-rate) so the
    evaluation pass is the identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng: np.random.Generator | None = None
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if self.rng is None:
            raise RuntimeError("dropout needs an rng in training mode")
        keep = 1.0 - self.rate
        draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
        self._mask = (self.rng.random(x.shape, dtype=draw_dtype) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        dy = dy * self._mask
        self._mask = None
        return dy


class Dense(Layer):
    def __init__(
        self,
        store: ParamStore,
        name: str,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.name = name
        self.d_in = d_in
        self.d_out = d_out
        self.w = store.add(name + ".w", he_normal(rng, (d_in, d_out), d_in, dtype))
        self.b = store.add(name + ".b", np.zeros(d_out, dtype=dtype))

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"{self.name}: expected (N,{self.d_in}), got {x.shape}")
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        dx = dy @ self.w.value.T
        self._x = None
        return dx


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of softmax given its output ``y``."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


class Softmax(Layer):
    def forward(self, x, train=False):
        self._y = softmax(x)
        return self._y

    def backward(self, dy):
        dx = softmax_backward(self._y, dy)
        self._y = None
        return dx


def moe_forward(
    embedding: np.ndarray,
    expert_w: np.ndarray,
    expert_b: np.ndarray,
    gate_w: np.ndarray,
    gate_b: np.ndarray,
) -> np.ndarray:
    """Mixture-of-experts head on a (N, D) embedding.

    Each of K experts is a dense layer with ReLU; a softmax gate weights the
    expert outputs and the combined vector passes through a final softmax.
    """
    n, d = embedding.shape
    k, d_w, c = expert_w.shape
    if d_w != d or gate_w.shape != (d, k):
        raise ValueError("expert and gate shapes disagree with the embedding")
    experts = np.maximum(np.einsum("nd,kdc->nkc", embedding, expert_w) + expert_b, 0.0)
    gates = softmax(embedding @ gate_w + gate_b)  # (N, K)
    combined = np.einsum("nk,nkc->nc", gates, experts)
    return softmax(combined)


class MoEHead(Layer):
    """Dense mixture-of-experts classifier head: (N, D) embedding in,
    (N, C) class posteriors out."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        d_in: int,
        n_classes: int,
        n_experts: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.name = name
        self.d_in = d_in
        self.n_classes = n_classes
        self.n_experts = n_experts
        self.ew = store.add(
            name + ".experts.w",
            he_normal(rng, (n_experts, d_in, n_classes), d_in, dtype),
        )
        self.eb = store.add(name + ".experts.b", np.zeros((n_experts, n_classes), dtype=dtype))
        self.gw = store.add(name + ".gate.w", he_normal(rng, (d_in, n_experts), d_in, dtype))
        self.gb = store.add(name + ".gate.b", np.zeros(n_experts, dtype=dtype))

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"{self.name}: expected (N,{self.d_in}), got {x.shape}")
        pre = np.einsum("nd,kdc->nkc", x, self.ew.value) + self.eb.value
        experts = np.maximum(pre, 0.0)
        gates = softmax(x @ self.gw.value + self.gb.value)
        combined = np.einsum("nk,nkc->nc", gates, experts)
        probs = softmax(combined)
        self._cache = (x, pre, experts, gates, probs)
        return probs

    def backward(self, dy):
        x, pre, experts, gates, probs = self._cache
        dz = softmax_backward(probs, dy)  # (N, C)
        # combined = sum_k gates[:,k] * experts[:,k,:]
        dexperts = gates[:, :, None] * dz[:, None, :]  # (N, K, C)
        dgates = np.einsum("nc,nkc->nk", dz, experts)
        dpre = dexperts * (pre > 0)
        self.ew.grad += np.einsum("nd,nkc->kdc", x, dpre)
        self.eb.grad += dpre.sum(axis=0)
        dglogit = softmax_backward(gates, dgates)
        self.gw.grad += x.T @ dglogit
        self.gb.grad += dglogit.sum(axis=0)
        dx = np.einsum("nkc,kdc->nd", dpre, self.ew.value) + dglogit @ self.gw.value.T
        self._cache = None
        return dx
