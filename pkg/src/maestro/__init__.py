"""Multimodal time-series classification with symbolic tokens, budgeted
sparse attention, and expert routing."""

from .config import DEFAULT_SEED, RunConfig, load_config
from .data import (CORRUPTION_MODES, Dataset, ModalityInfo, SampleRecord,
                   SynthSpec, corrupt, generate_synthetic, load_dataset,
                   save_dataset, stratified_split)
from .errors import (ConfigError, ContractViolation, DataError, MaestroError,
                     NumericFault, UsageError)
from .model import Model, ModelConfig, model_gradient_check
from .training import CurriculumSchedule, TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CORRUPTION_MODES", "ConfigError", "ContractViolation",
    "CurriculumSchedule", "DEFAULT_SEED", "DataError", "Dataset",
    "MaestroError", "ModalityInfo", "Model", "ModelConfig", "NumericFault",
    "RunConfig", "SampleRecord", "SynthSpec", "TrainConfig", "TrainResult",
    "UsageError", "corrupt", "generate_synthetic", "load_config",
    "load_dataset", "model_gradient_check", "save_dataset",
    "stratified_split", "train", "__version__",
]
