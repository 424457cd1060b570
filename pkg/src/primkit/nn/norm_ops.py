"""Functional normalization entry points over an explicit state record."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInputError, ShapeError, UninitializedStatsError
from . import functional as F
from .layers import NORM_EPS, NORM_MOMENTUM


@dataclass
class NormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = NORM_MOMENTUM
    epsilon: float = NORM_EPS
    initialized: bool = field(default=False)

    @classmethod
    def fresh(cls, channels, dtype=np.float64, epsilon=NORM_EPS, batch=True):
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype) if batch else None,
            running_var=np.ones(channels, dtype) if batch else None,
            epsilon=epsilon,
        )


def batch_norm_apply(x, state: NormState, mode: str = "train"):
    """Batch normalization; train mode updates ``state``'s running statistics."""
    x = np.asarray(x)
    if x.ndim not in (2, 3) or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"batch_norm: input shape {x.shape} vs {state.gamma.shape[0]} channels")
    if mode == "train":
        axes = (0, 2) if x.ndim == 3 else (0,)
        if x.size // x.shape[1] < 2:
            raise DegenerateInputError("batch_norm: need at least 2 values per channel in train mode")
        out, _, mean, var = F.normalize_forward(x, state.gamma, state.beta, state.epsilon, axes)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean.ravel()
        state.running_var = (1 - m) * state.running_var + m * var.ravel()
        state.initialized = True
        return out
    if not state.initialized:
        raise UninitializedStatsError("batch_norm evaluated before any train-mode pass or loaded statistics")
    return F.frozen_normalize_forward(x, state.gamma, state.beta, state.running_mean, state.running_var,
                                      state.epsilon)[0]


def instance_norm_apply(x, state: NormState, mode: str = "train"):
    """Instance normalization; identical in both modes and stateless."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"instance_norm: input shape {x.shape} vs {state.gamma.shape[0]} channels")
    if x.shape[2] < 2:
        raise DegenerateInputError("instance_norm: window of length 1 has no temporal statistics")
    return F.normalize_forward(x, state.gamma, state.beta, state.epsilon, (2,))[0]
