"""Selective state-space models with LSH bucketing for long point-cloud sequences."""
from .estimators import LshBucketer, PileupClassifier, SelectiveScanTransformer, TrackEmbedder
from .model import ModelConfig, PerPointBatch, forward, init_params, param_count, predict, preset
from .numeric import DimensionError, NonFiniteError, Tensor, grad_check

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "LshBucketer", "ModelConfig", "NonFiniteError", "PerPointBatch", "PileupClassifier",
    "SelectiveScanTransformer", "Tensor", "TrackEmbedder", "forward", "grad_check", "init_params",
    "param_count", "predict", "preset",
]
