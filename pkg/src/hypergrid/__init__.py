"""Grid-wise gated projection layers in a small text-to-text transformer,
with a multi-task co-training harness and a grid-size sweep engine."""

from .gates import GateGrid, HyperGridLayer, ProjectionDims, param_cost, pool_prefix
from .model import GateConfig, ModelConfig, TransformerModel
from .outgate import OutGateLayer
from .tensor import DimensionError, Tensor, no_grad

__all__ = [
    "DimensionError",
    "GateConfig",
    "GateGrid",
    "HyperGridLayer",
    "ModelConfig",
    "OutGateLayer",
    "ProjectionDims",
    "Tensor",
    "TransformerModel",
    "no_grad",
    "param_cost",
    "pool_prefix",
]

__version__ = "0.1.0"
