"""Take-over time prediction: feature schema, datasets, LSTM models, streaming, evaluation."""

from .errors import (CheckpointError, ConfigError, DataError, LabelError, NonFiniteError, ShapeError,
                     TotkitError, TrainingError, ValidationError)
from .features import ABLATION_MASKS, Activity, FeatureFrame, FeatureMask
from .episodes import Episode
from .model import ModelConfig, ModelParams, forward_window, init_params, tot_loss, zero_params
from .training import TrainConfig, train
from .streaming import StreamRuntime, safety_gate
from .evaluation import compute_mae
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ABLATION_MASKS", "Activity", "CheckpointError", "ConfigError", "DataError", "Episode",
    "FeatureFrame", "FeatureMask", "LabelError", "ModelConfig", "ModelParams", "NonFiniteError",
    "ShapeError", "StreamRuntime", "TotkitError", "TrainConfig", "TrainingError", "ValidationError",
    "compute_mae", "forward_window", "init_params", "load_checkpoint", "safety_gate",
    "save_checkpoint", "tot_loss", "train", "zero_params",
]
