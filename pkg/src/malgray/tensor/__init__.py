"""Numeric core: layer ops, model graphs and reverse-mode differentiation."""

from .graph import (
    BatchNormInference,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    ModelGraph,
    Parameter,
    ReLU,
    ResidualAdd,
    Softmax,
    Tape,
    backward,
    forward,
    gradient_check,
    init_params,
    loss_and_grad,
    predict_proba,
)
from .ops import cross_entropy_loss, softmax

__all__ = [
    "BatchNormInference", "Conv2d", "Dense", "Flatten", "GlobalAvgPool", "MaxPool2d", "ModelGraph",
    "Parameter", "ReLU", "ResidualAdd", "Softmax", "Tape", "backward", "forward", "gradient_check",
    "init_params", "loss_and_grad", "predict_proba", "cross_entropy_loss", "softmax",
]
