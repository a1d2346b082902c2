"""Lung sound classification: front-ends, from-scratch CNNs, and evaluation
for the ICBHI respiratory-sound corpus."""

__version__ = "0.1.0"

from lungsound.architectures import (
    ARCHITECTURES,
    EMBEDDING_DIM,
    Model,
    build_model,
    load_model,
    save_model,
)
from lungsound.audio import AudioClip, AudioError, ClipSource, read_wav, write_wav
from lungsound.config import ExperimentConfig, GridSpec, build_config
from lungsound.frontends import (
    FRONTENDS,
    N_BINS,
    TARGET_RATE,
    FrontendConfig,
    Spectrogram,
    compute_frontend,
    resample,
)
from lungsound.icbhi import (
    CycleLabel,
    DatasetIndex,
    DiseaseGroup,
    SplitPlan,
    scan_dataset,
)
from lungsound.metrics import (
    ConfusionMatrix,
    ScoreTriple,
    aggregate_posteriors,
    icbhi_score,
    predict_label,
    sensitivity,
    specificity,
)
from lungsound.patches import MixupConfig, Patch, mixup_batch, split_patches
from lungsound.training import TrainConfig, distill, train

__all__ = [
    "ARCHITECTURES",
    "AudioClip",
    "AudioError",
    "ClipSource",
    "ConfusionMatrix",
    "CycleLabel",
    "DatasetIndex",
    "DiseaseGroup",
    "EMBEDDING_DIM",
    "ExperimentConfig",
    "FRONTENDS",
    "FrontendConfig",
    "GridSpec",
    "MixupConfig",
    "Model",
    "N_BINS",
    "Patch",
    "ScoreTriple",
    "Spectrogram",
    "SplitPlan",
    "TARGET_RATE",
    "TrainConfig",
    "aggregate_posteriors",
    "build_config",
    "build_model",
    "compute_frontend",
    "distill",
    "icbhi_score",
    "load_model",
    "mixup_batch",
    "predict_label",
    "read_wav",
    "resample",
    "save_model",
    "scan_dataset",
    "sensitivity",
    "specificity",
    "split_patches",
    "train",
    "write_wav",
]
