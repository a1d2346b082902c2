"""Network definitions: the C-DNN baseline, its mixture-of-experts variant,
and the small student network used for knowledge distillation.

The two large networks share a six-block convolutional trunk; each block runs
batch norm, a 3x3 convolution, ReLU, a second batch norm, optional 2x2 average
pooling, then dropout.  The final block swaps pooling for global average
pooling, which yields the 512-dimensional embedding the heads consume.
"""

from __future__ import annotations

import numpy as np

from lungsound.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from lungsound.nn.layers import (
    AvgPool,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    MoEHead,
    ReLU,
    Softmax,
)
from lungsound.nn.store import ParamStore, count_params

ARCHITECTURES = ("cdnn", "cnn_moe", "student")
DEFAULT_EXPERTS = 10
EMBEDDING_DIM = 512

_TRUNK_CHANNELS = (64, 128, 256, 256, 512, 512)
_TRUNK_DROPOUT = (0.10, 0.15, 0.20, 0.20, 0.25, 0.25)
_TRUNK_POOLED = (True, True, False, True, False, False)


class Model:
    """A layer pipeline with one designated embedding tap point."""

    def __init__(self, arch, n_classes, n_experts, store, layers, embed_index, block_ends):
        self.arch = arch
        self.n_classes = n_classes
        self.n_experts = n_experts
        self.store = store
        self.layers = layers
        self.embed_index = embed_index
        self.block_ends = block_ends

    def set_rng(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def forward(self, x: np.ndarray, train: bool = False, want_embedding: bool = False):
        emb = None
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train=train)
            if i == self.embed_index:
                emb = x
        return (x, emb) if want_embedding else x

    def backward(self, dy: np.ndarray, d_embedding: np.ndarray | None = None) -> np.ndarray:
        for i in range(len(self.layers) - 1, -1, -1):
            if d_embedding is not None and i == self.embed_index:
                dy = dy + d_embedding
            dy = self.layers[i].backward(dy)
        return dy

    def shape_trace(self, height: int = 64, width: int = 64) -> list[tuple[str, tuple]]:
        """Output shape after each named stage for a single dummy input."""
        x = np.zeros((1, height, width, 1), dtype=np.float32)
        trace = []
        ends = dict((idx, name) for name, idx in self.block_ends)
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train=False)
            if i in ends:
                trace.append((ends[i], x.shape[1:]))
        return trace

    def batchnorms(self) -> list[BatchNorm]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]

    def bn_stats(self) -> dict[str, np.ndarray]:
        stats: dict[str, np.ndarray] = {}
        for bn in self.batchnorms():
            stats[bn.name + ".running_mean"] = bn.running_mean
            stats[bn.name + ".running_var"] = bn.running_var
        return stats

    def n_params(self) -> int:
        return count_params(self.store)


def _build_trunk(store, rng, dtype):
    layers: list = []
    block_ends: list[tuple[str, int]] = []
    c_in = 1
    for i, (c_out, rate, pooled) in enumerate(
        zip(_TRUNK_CHANNELS, _TRUNK_DROPOUT, _TRUNK_POOLED), start=1
    ):
        name = f"block{i}"
        layers.append(BatchNorm(store, f"{name}.bn_in", c_in, dtype=dtype))
        layers.append(Conv2D(store, f"{name}.conv", c_in, c_out, rng, dtype=dtype))
        layers.append(ReLU())
        layers.append(BatchNorm(store, f"{name}.bn_out", c_out, dtype=dtype))
        if i == len(_TRUNK_CHANNELS):
            layers.append(GlobalAvgPool())
            embed_index = len(layers) - 1
        elif pooled:
            layers.append(AvgPool(2))
        layers.append(Dropout(rate))
        block_ends.append((name, len(layers) - 1))
        c_in = c_out
    return layers, block_ends, embed_index


def build_model(
    arch: str,
    n_classes: int,
    n_experts: int = DEFAULT_EXPERTS,
    seed: int = 0,
    dtype=np.float32,
) -> Model:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if arch == "cnn_moe" and n_experts < 1:
        raise ValueError(f"need at least 1 expert, got {n_experts}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    if arch == "student":
        layers = [
            Conv2D(store, "block1.conv", 1, 128, rng, dtype=dtype),
            ReLU(),
            AvgPool(4),
            Conv2D(store, "block2.conv", 128, 512, rng, dtype=dtype),
            ReLU(),
            GlobalAvgPool(),
        ]
        embed_index = len(layers) - 1
        block_ends = [("block1", 2), ("block2", embed_index)]
        layers.append(Dense(store, "head.dense", EMBEDDING_DIM, n_classes, rng, dtype=dtype))
        layers.append(Softmax())
        block_ends.append(("head", len(layers) - 1))
        return Model(arch, n_classes, 0, store, layers, embed_index, block_ends)

    layers, block_ends, embed_index = _build_trunk(store, rng, dtype)
    if arch == "cdnn":
        layers.append(Dense(store, "head.dense", EMBEDDING_DIM, n_classes, rng, dtype=dtype))
        layers.append(Softmax())
        experts = 0
    else:
        layers.append(
            MoEHead(store, "moe", EMBEDDING_DIM, n_classes, n_experts, rng, dtype=dtype)
        )
        experts = n_experts
    block_ends.append(("head", len(layers) - 1))
    return Model(arch, n_classes, experts, store, layers, embed_index, block_ends)


def save_model(model: Model, path) -> None:
    save_checkpoint(
        path, model.arch, model.n_classes, model.n_experts, model.store, model.bn_stats()
    )


def load_model(path, dtype=np.float32) -> Model:
    data = load_checkpoint(path)
    model = build_model(data.arch, data.n_classes, max(data.n_experts, 1), seed=0, dtype=dtype)
    model.n_experts = data.n_experts
    for name, value in data.params.items():
        if name not in model.store:
            raise CheckpointError(f"checkpoint parameter {name!r} not in {data.arch}")
        p = model.store[name]
        if p.value.shape != value.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: {p.value.shape} vs {value.shape}"
            )
        p.value = value.astype(p.value.dtype)
        p.grad = np.zeros_like(p.value)
        p.m = np.zeros_like(p.value)
        p.v = np.zeros_like(p.value)
    missing = set(model.store.names()) - set(data.params)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    bn_by_name = {bn.name: bn for bn in model.batchnorms()}
    for key, value in data.stats.items():
        base, _, kind = key.rpartition(".")
        bn = bn_by_name.get(base)
        if bn is None or kind not in ("running_mean", "running_var"):
            raise CheckpointError(f"unrecognized statistic {key!r}")
        setattr(bn, kind, value.astype(bn.running_mean.dtype))
    return model
