"""From-scratch neural network engine on numpy arrays (NHWC layout)."""

from lungsound.nn.checkpoint import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    CheckpointData,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from lungsound.nn.gradcheck import fd_gradient, fd_param_gradients, max_param_rel_error, rel_error
from lungsound.nn.layers import (
    AvgPool,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    MoEHead,
    ReLU,
    Softmax,
    he_normal,
    moe_forward,
    softmax,
    softmax_backward,
)
from lungsound.nn.losses import (
    DEFAULT_L2,
    LOG_CLAMP,
    LossValue,
    add_l2_gradients,
    cross_entropy_l2_loss,
    euclidean_embedding_grad,
    euclidean_embedding_loss,
    kl_div_l2_loss,
    l2_term,
)
from lungsound.nn.store import Param, ParamStore, TrainingError, adam_step, count_params

__all__ = [
    "AvgPool",
    "BatchNorm",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "CheckpointData",
    "CheckpointError",
    "Conv2D",
    "DEFAULT_L2",
    "Dense",
    "Dropout",
    "GlobalAvgPool",
    "LOG_CLAMP",
    "Layer",
    "LossValue",
    "MoEHead",
    "Param",
    "ParamStore",
    "ReLU",
    "Softmax",
    "TrainingError",
    "adam_step",
    "add_l2_gradients",
    "count_params",
    "cross_entropy_l2_loss",
    "euclidean_embedding_grad",
    "euclidean_embedding_loss",
    "fd_gradient",
    "fd_param_gradients",
    "he_normal",
    "kl_div_l2_loss",
    "l2_term",
    "load_checkpoint",
    "max_param_rel_error",
    "moe_forward",
    "rel_error",
    "save_checkpoint",
    "softmax",
    "softmax_backward",
]
