"""Motion-guided self and cross attention for few-shot video classification."""

from .adapters import AdapterConfig, AdapterModel, build_adapter_model
from .cmga import CmgaParams, EpisodeFeatures, cmga_forward
from .config import RunConfig, load_config, parse_config
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    FormatError,
    MGAError,
    MissingArtifactError,
    NumericalError,
    UsageError,
)
from .fewshot import Adam, evaluate, sample_episode, train_episode
from .gradcheck import grad_check
from .params import ParameterStore
from .pipeline import FTConfig, FTModel
from .smga import SmgaParams, smga_forward
from .tensor import Tensor, no_grad

__all__ = [
    "Adam",
    "AdapterConfig",
    "AdapterModel",
    "CmgaParams",
    "ConfigurationError",
    "DataError",
    "DimensionError",
    "EpisodeFeatures",
    "FTConfig",
    "FTModel",
    "FormatError",
    "MGAError",
    "MissingArtifactError",
    "NumericalError",
    "ParameterStore",
    "RunConfig",
    "SmgaParams",
    "Tensor",
    "UsageError",
    "build_adapter_model",
    "cmga_forward",
    "evaluate",
    "grad_check",
    "load_config",
    "no_grad",
    "parse_config",
    "sample_episode",
    "smga_forward",
    "train_episode",
]
