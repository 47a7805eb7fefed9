"""Prompt-driven two-stage 3D segmentation of branching cells.

Stage one finds cell bodies in a volumetric image with a hierarchical 3D
vision-transformer U-Net; stage two segments one cell's full arbor per soma
prompt through cross-attention skip connections. Everything runs on a
from-scratch float32 numpy autodiff core with numba-accelerated kernels.
"""

from .config import (ConfigError, ModelConfig, SynthConfig, TrainConfig,
                     desk_scale_train, load_config)
from .model import BranchModel, SomaModel, count_parameters
from .tensor import GraphError, NonFiniteError, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "GraphError", "NonFiniteError",
    "ConfigError", "ModelConfig", "TrainConfig", "SynthConfig",
    "load_config", "desk_scale_train",
    "SomaModel", "BranchModel", "count_parameters",
    "__version__",
]
