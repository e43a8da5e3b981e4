"""Learning an inverter's differential current from synchro-waveform events, with an optional
R-L circuit residual in the loss."""

from .nn import MlpModel, init_model
from .simulate import DisturbanceConfig, GroundTruthIbr, LineParams, generate_dataset
from .training import TrainConfig, train_data_only, train_piml_known, train_piml_unknown
from .waveform import (
    Dataset,
    DatasetSplit,
    DifferentialEvent,
    SamplingConfig,
    WaveformEvent,
    differential,
    split_events,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetSplit",
    "DifferentialEvent",
    "DisturbanceConfig",
    "GroundTruthIbr",
    "LineParams",
    "MlpModel",
    "SamplingConfig",
    "TrainConfig",
    "WaveformEvent",
    "differential",
    "generate_dataset",
    "init_model",
    "split_events",
    "train_data_only",
    "train_piml_known",
    "train_piml_unknown",
]
