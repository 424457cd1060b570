"""Minimal differentiable-layer engine (numpy, channels-first)."""

from .functional import (
    conv1d_apply,
    dense_apply,
    dropout_apply,
    global_avg_pool,
    lstm_backward,
    lstm_forward,
    relu_apply,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import GradCheckReport, gradient_check
from .graph import LayerGraph, SoftmaxCrossEntropy
from .layers import (
    BatchNorm,
    Conv1d,
    Dense,
    DenseConcat,
    Dropout,
    GlobalAvgPool,
    InstanceNorm,
    Layer,
    ReLU,
    Residual,
    Sequential,
    make_norm,
)
from .norm_ops import batch_norm_apply, instance_norm_apply, NormState
from .recurrent import LSTM

__all__ = [
    "BatchNorm", "Conv1d", "Dense", "DenseConcat", "Dropout", "GlobalAvgPool", "GradCheckReport",
    "InstanceNorm", "LSTM", "Layer", "LayerGraph", "NormState", "ReLU", "Residual", "Sequential",
    "SoftmaxCrossEntropy", "batch_norm_apply", "conv1d_apply", "dense_apply", "dropout_apply",
    "global_avg_pool", "gradient_check", "instance_norm_apply", "lstm_backward", "lstm_forward",
    "make_norm", "relu_apply", "softmax", "softmax_cross_entropy",
]
