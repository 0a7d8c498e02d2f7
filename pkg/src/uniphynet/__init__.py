"""UniPhyNet: multimodal physiological-signal classification on a from-scratch numpy autodiff core."""
__version__ = "0.1.0"

from .augment import AugmentedFold, AugmentPolicy, augment_training_fold
from .dataset import (
    ConfigError,
    DataError,
    FoldPlan,
    LabeledDataset,
    LabelScheme,
    Modality,
    Recording,
    SynthSpec,
    TrainingFold,
    Window,
    generate_synthetic,
    load_dataset,
    load_recording,
    make_folds,
    map_label,
    segment,
)
from .dsp import design_filter, filtfilt, preprocess, preprocess_dataset
from .evaluation import ConfusionMatrix, CvReport, compute_metrics, run_cross_validation
from .kernels import BACKEND
from .model import BlockKind, ModalityConfig, NetConfig, UniPhyNet, build_model, load_model, tiny_modality
from .train import AdamState, PlateauScheduler, TrainConfig, TrainLog, adamw_step, train_model

__all__ = [
    "AdamState", "AugmentPolicy", "AugmentedFold", "BACKEND", "BlockKind", "ConfigError", "ConfusionMatrix",
    "CvReport", "DataError", "FoldPlan", "LabelScheme", "LabeledDataset", "Modality", "ModalityConfig",
    "NetConfig", "PlateauScheduler", "Recording", "SynthSpec", "TrainConfig", "TrainLog", "TrainingFold",
    "UniPhyNet", "Window", "adamw_step", "augment_training_fold", "build_model", "compute_metrics",
    "design_filter", "filtfilt", "generate_synthetic", "load_dataset", "load_model", "load_recording",
    "make_folds", "map_label", "preprocess", "preprocess_dataset", "run_cross_validation", "segment",
    "tiny_modality", "train_model",
]
