"""Desk-scale lightweight multimodal tracking engine.

A float64 autodiff tensor core, cross-modal fusion modules (template-search
interaction, cross-attention fusion, spatiotemporal template aggregation), a
rep-center prediction head with structural fusion, a dynamic-template
tracking pipeline, a two-phase trainer, and one-pass/long-term evaluation
metrics. Verified by parameter-count, invariant, gradient and small-oracle
tests rather than full benchmark training.
"""

from .config import TrackerConfig, TrainConfig
from .errors import ConfigError, ContractError, DataError, ShapeError
from .model import TrackerNet
from .params import ParamStore, count_params
from .tensor import Tensor

__version__ = "0.1.0"
__all__ = ["Tensor", "ParamStore", "count_params", "TrackerNet",
           "TrackerConfig", "TrainConfig", "ContractError", "ShapeError",
           "ConfigError", "DataError", "__version__"]
