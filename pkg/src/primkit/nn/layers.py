"""Layer objects wrapping the functional kernels.

A layer owns named parameter arrays (``params``) with same-shaped gradient
buffers (``grads``). ``forward`` caches what ``backward`` needs; backward
overwrites the gradient buffers and never touches parameter values.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, DegenerateInputError, ShapeError, UninitializedStatsError
from . import functional as F

DEFAULT_DTYPE = np.float32
NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=DEFAULT_DTYPE):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"
    #: conv and dense layers on the main path count toward network depth
    counts_toward_depth = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def children(self):
        return ()

    def buffers(self) -> dict:
        return {}

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def named_parameters(self, prefix=""):
        """Yield ``(name, param, grad)`` for this layer and all descendants."""
        for name, value in self.params.items():
            yield prefix + name, value, self.grads[name]
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, value in self.buffers().items():
            yield prefix + name, value
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def n_parameters(self) -> int:
        return int(sum(p.size for _, p, _ in self.named_parameters()))

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast every parameter, gradient and buffer in place of the layer tree."""
        for m in self.modules():
            for name in list(m.params):
                m.params[name] = m.params[name].astype(dtype)
                m.grads[name] = m.grads[name].astype(dtype)
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass

    def __repr__(self):
        return f"{type(self).__name__}()"


class Dense(Layer):
    kind = "dense"
    counts_toward_depth = True

    def __init__(self, in_features, out_features, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        if in_features <= 0 or out_features <= 0:
            raise ConfigError(f"dense sizes must be positive, got {in_features}->{out_features}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self._add_param("weight", glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype))
        self._add_param("bias", np.zeros(out_features, dtype))
        self._cache = None

    def forward(self, x):
        out, self._cache = F.dense_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, grad):
        dx, dw, db = F.dense_backward(grad, self._cache)
        self.grads["weight"][...] = dw
        self.grads["bias"][...] = db
        return dx

    def __repr__(self):
        o, i = self.params["weight"].shape
        return f"Dense({i}->{o})"


class Conv1d(Layer):
    kind = "conv1d"
    counts_toward_depth = True

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding="same",
                 dilation=1, groups=1, bias=True, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"conv1d channels {in_channels}->{out_channels} not divisible by groups={groups}")
        if min(in_channels, out_channels, kernel_size, stride, dilation) <= 0:
            raise ConfigError("conv1d sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        cg, og = in_channels // groups, out_channels // groups
        self._add_param("weight", glorot_uniform(rng, (out_channels, cg, kernel_size),
                                                 cg * kernel_size, og * kernel_size, dtype))
        if bias:
            self._add_param("bias", np.zeros(out_channels, dtype))
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        self._cache = None

    @property
    def kernel_size(self):
        return self.params["weight"].shape[2]

    def output_length(self, length):
        pad = F.same_padding(self.kernel_size, self.dilation) if self.padding == "same" else int(self.padding)
        return F.conv_output_length(length, self.kernel_size, self.stride, pad, self.dilation)

    def forward(self, x):
        out, self._cache = F.conv1d_forward(x, self.params["weight"], self.params.get("bias"),
                                            self.stride, self.padding, self.dilation, self.groups)
        return out

    def backward(self, grad):
        dx, dw, db = F.conv1d_backward(grad, self._cache)
        self.grads["weight"][...] = dw
        if "bias" in self.params:
            self.grads["bias"][...] = db
        return dx

    def __repr__(self):
        o, cg, k = self.params["weight"].shape
        extra = f", stride={self.stride}" if self.stride != 1 else ""
        extra += f", groups={self.groups}" if self.groups != 1 else ""
        return f"Conv1d({cg * self.groups}->{o}, k={k}{extra})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        out, self._mask = F.relu_forward(x)
        return out

    def backward(self, grad):
        return F.relu_backward(grad, self._mask)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode.

    Setting ``frozen`` makes train-mode passes reuse the last mask, which
    the gradient checker relies on.
    """

    kind = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate {rate} outside [0, 1)")
        self.rate = float(rate)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.frozen = False
        self._mask = None

    def forward(self, x):
        if self.frozen and self.training and self._mask is not None and self._mask.shape == x.shape:
            return x * self._mask
        out, self._mask = F.dropout_forward(x, self.rate, self.training, self.rng)
        return out

    def backward(self, grad):
        return F.dropout_backward(grad, self._mask)

    def __repr__(self):
        return f"Dropout({self.rate})"


class _Norm(Layer):
    def __init__(self, channels, eps=NORM_EPS, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self._add_param("gamma", np.ones(channels, dtype))
        self._add_param("beta", np.zeros(channels, dtype))
        self._cache = None

    def _check_channels(self, x):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.kind}: input shape {x.shape} does not have {self.channels} channels")

    def __repr__(self):
        return f"{type(self).__name__}({self.channels})"


class BatchNorm(_Norm):
    """Batch statistics in train mode, running statistics in eval mode."""

    kind = "batch_norm"

    def __init__(self, channels, momentum=NORM_MOMENTUM, eps=NORM_EPS, dtype=DEFAULT_DTYPE):
        super().__init__(channels, eps, dtype)
        self.momentum = momentum
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.num_batches = np.zeros(1, dtype)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "num_batches": self.num_batches}

    def set_buffer(self, name, value):
        getattr(self, name)[...] = value

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        self.num_batches = self.num_batches.astype(dtype)

    def forward(self, x):
        self._check_channels(x)
        g, b = self.params["gamma"], self.params["beta"]
        if self.training:
            axes = (0, 2) if x.ndim == 3 else (0,)
            count = x.shape[0] * (x.shape[2] if x.ndim == 3 else 1)
            if count < 2:
                raise DegenerateInputError("batch_norm: need at least 2 values per channel in train mode")
            out, cache, mean, var = F.normalize_forward(x, g, b, self.eps, axes)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean.ravel()
            self.running_var[...] = (1 - m) * self.running_var + m * var.ravel()
            self.num_batches += 1
            self._cache = ("batch", cache)
            return out
        if self.num_batches[0] == 0:
            raise UninitializedStatsError("batch_norm evaluated before any train-mode pass or loaded statistics")
        out, cache = F.frozen_normalize_forward(x, g, b, self.running_mean, self.running_var, self.eps)
        self._cache = ("frozen", cache)
        return out

    def backward(self, grad):
        mode, cache = self._cache
        if mode == "batch":
            dx, dg, db = F.normalize_backward(grad, cache)
        else:
            dx, dg, db = F.frozen_normalize_backward(grad, cache)
        self.grads["gamma"][...] = dg
        self.grads["beta"][...] = db
        return dx


class InstanceNorm(_Norm):
    """Per-example, per-channel standardization over time in every mode."""

    kind = "instance_norm"

    def forward(self, x):
        self._check_channels(x)
        if x.ndim != 3:
            raise ShapeError(f"instance_norm: expected B x C x T input, got shape {x.shape}")
        if x.shape[2] < 2:
            raise DegenerateInputError("instance_norm: window of length 1 has no temporal statistics")
        out, self._cache, _, _ = F.normalize_forward(x, self.params["gamma"], self.params["beta"], self.eps, (2,))
        return out

    def backward(self, grad):
        dx, dg, db = F.normalize_backward(grad, self._cache)
        self.grads["gamma"][...] = dg
        self.grads["beta"][...] = db
        return dx


def make_norm(kind: str, channels: int, dtype=DEFAULT_DTYPE):
    if kind == "batch":
        return BatchNorm(channels, dtype=dtype)
    if kind == "instance":
        return InstanceNorm(channels, dtype=dtype)
    raise ConfigError(f"unknown normalization {kind!r}; expected 'batch' or 'instance'")


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x):
        out, self._length = F.global_avg_pool_forward(x)
        return out

    def backward(self, grad):
        return F.global_avg_pool_backward(grad, self._length)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.layers))]
        if len(self.names) != len(self.layers):
            raise ConfigError("one name per layer required")

    def children(self):
        return tuple(zip(self.names, self.layers))

    def append(self, layer, name=None):
        self.layers.append(layer)
        self.names.append(name if name is not None else str(len(self.layers) - 1))
        return self

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"Sequential({inner})"


class Residual(Layer):
    """``body(x) + shortcut(x)``; the shortcut defaults to identity."""

    kind = "residual_add"

    def __init__(self, body, shortcut=None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut

    def children(self):
        kids = [("body", self.body)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        return tuple(kids)

    def forward(self, x):
        y = self.body.forward(x)
        s = x if self.shortcut is None else self.shortcut.forward(x)
        if y.shape != s.shape:
            raise ShapeError(f"residual_add: body output {y.shape} vs shortcut {s.shape}")
        return y + s

    def backward(self, grad):
        dx = self.body.backward(grad)
        return dx + (grad if self.shortcut is None else self.shortcut.backward(grad))


class DenseConcat(Layer):
    """DenseNet-style connection: ``concat([x, body(x)])`` along channels.

    With ``groups > 1`` the channel axis is treated as ``groups`` independent
    blocks and concatenation happens inside each block, so per-channel
    embedding modules stay separate.
    """

    kind = "concat"

    def __init__(self, body, groups=1):
        super().__init__()
        self.body = body
        self.groups = groups

    def children(self):
        return (("body", self.body),)

    def forward(self, x):
        y = self.body.forward(x)
        B, cx, T = x.shape
        cy = y.shape[1]
        g = self.groups
        if y.shape[0] != B or y.shape[2] != T or cx % g or cy % g:
            raise ShapeError(f"concat: input {x.shape} and body output {y.shape} incompatible (groups={g})")
        self._split = (cx // g, cy // g)
        out = np.concatenate([x.reshape(B, g, cx // g, T), y.reshape(B, g, cy // g, T)], axis=2)
        return out.reshape(B, cx + cy, T)

    def backward(self, grad):
        a, b = self._split
        B, _, T = grad.shape
        g4 = grad.reshape(B, self.groups, a + b, T)
        dx = g4[:, :, :a].reshape(B, self.groups * a, T)
        dy = np.ascontiguousarray(g4[:, :, a:]).reshape(B, self.groups * b, T)
        return dx + self.body.backward(dy)
