"""Spiking graph network for skeleton sequences, written on plain numpy."""

from .errors import ConfigError, ContractError, DataError, DimensionError, NumericalError, SpikeGraphError
from .model import ModelConfig, SpikingGraphNet, build_model

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DataError", "DimensionError", "NumericalError", "SpikeGraphError",
    "ModelConfig", "SpikingGraphNet", "build_model",
]
