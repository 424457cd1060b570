"""Forward/backward kernels for every layer kind.

Each ``*_forward`` returns the output and a cache tuple; the matching
``*_backward`` consumes the upstream gradient and the cache. Arrays are
channels-first: ``B x C x T`` for sequences, ``B x F`` for flat data.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateInputError, LabelError, NumericError, ShapeError


# ---------------------------------------------------------------- dense


def dense_forward(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weights shape {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense: bias shape {bias.shape} incompatible with weights shape {weights.shape}")
    return x @ weights.T + bias, (x, weights)


def dense_backward(grad, cache):
    x, weights = cache
    return grad @ weights, grad.T @ x, grad.sum(axis=0)


def dense_apply(x, weights, bias):
    """``x @ weights.T + bias`` for ``x`` of shape ``B x F_in``."""
    return dense_forward(np.asarray(x), np.asarray(weights), np.asarray(bias))[0]


# ---------------------------------------------------------------- conv1d


def same_padding(kernel_size: int, dilation: int = 1) -> int:
    return dilation * (kernel_size - 1) // 2


def conv_output_length(length: int, kernel_size: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (length + 2 * padding - dilation * (kernel_size - 1) - 1) // stride + 1


def conv1d_forward(x, kernels, bias=None, stride=1, padding="same", dilation=1, groups=1):
    """Grouped 1-D cross-correlation with symmetric zero padding.

    ``kernels`` has shape ``C_out x (C_in / groups) x K``. Implemented as
    im2col followed by one batched matmul over groups.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d: expected B x C x T input, got shape {x.shape}")
    B, c_in, T = x.shape
    c_out, cg, K = kernels.shape
    if c_in != cg * groups or c_out % groups:
        raise ShapeError(
            f"conv1d: input shape {x.shape} incompatible with kernel shape {kernels.shape} (groups={groups})"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} incompatible with kernel shape {kernels.shape}")
    pad = same_padding(K, dilation) if padding == "same" else int(padding)
    t_out = conv_output_length(T, K, stride, pad, dilation)
    if t_out <= 0:
        raise DegenerateInputError(f"conv1d: input of length {T} too short for kernel {K} (dilation {dilation})")
    og = c_out // groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    span = (K - 1) * dilation + 1
    win = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation][:, :, :t_out]
    # B x G x cg x T' x K  ->  G x (B*T') x (cg*K)
    cols = win.reshape(B, groups, cg, t_out, K).transpose(1, 0, 3, 2, 4).reshape(groups, B * t_out, cg * K)
    wmat = kernels.reshape(groups, og, cg * K)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))  # G x (B*T') x og
    out = out.reshape(groups, B, t_out, og).transpose(1, 0, 3, 2).reshape(B, c_out, t_out)
    if bias is not None:
        out = out + bias[None, :, None]
    else:
        out = np.ascontiguousarray(out)
    cache = (cols, wmat, x.shape, xp.shape[2], pad, stride, dilation, groups, K)
    return out, cache


def conv1d_backward(grad, cache):
    """Returns ``(d_input, d_kernels, d_bias)``."""
    cols, wmat, in_shape, t_pad, pad, stride, dilation, groups, K = cache
    B, c_in, T = in_shape
    _, c_out, t_out = grad.shape
    og = c_out // groups
    cg = c_in // groups
    g2 = grad.reshape(B, groups, og, t_out).transpose(1, 0, 3, 2).reshape(groups, B * t_out, og)
    d_kernels = np.matmul(g2.transpose(0, 2, 1), cols).reshape(c_out, cg, K)
    d_bias = grad.sum(axis=(0, 2))
    dcols = np.matmul(g2, wmat)  # G x (B*T') x (cg*K)
    dcols = dcols.reshape(groups, B, t_out, cg, K).transpose(1, 0, 3, 4, 2).reshape(B, c_in, K, t_out)
    dxp = np.zeros((B, c_in, t_pad), dtype=grad.dtype)
    last = stride * (t_out - 1) + 1
    for k in range(K):
        start = k * dilation
        dxp[:, :, start:start + last:stride] += dcols[:, :, k, :]
    return dxp[:, :, pad:pad + T], d_kernels, d_bias


def conv1d_apply(x, kernels, bias=None, stride=1, padding="same", dilation=1, groups=1):
    return conv1d_forward(np.asarray(x), np.asarray(kernels), None if bias is None else np.asarray(bias),
                          stride, padding, dilation, groups)[0]


# ---------------------------------------------------------------- activations


def relu_forward(x):
    mask = x > 0
    return np.maximum(x, x.dtype.type(0)), mask


def relu_backward(grad, mask):
    return grad * mask


def relu_apply(x):
    return relu_forward(np.asarray(x))[0]


def dropout_forward(x, rate, training, rng):
    if not 0.0 <= rate < 1.0:
        from ..errors import ConfigError

        raise ConfigError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def dropout_apply(x, rate, training, rng):
    return dropout_forward(np.asarray(x), rate, training, rng)[0]


# ---------------------------------------------------------------- normalization


def _norm_axes(x, per_example: bool):
    if per_example:
        if x.ndim != 3:
            raise ShapeError(f"instance_norm: expected B x C x T input, got shape {x.shape}")
        return (2,)
    if x.ndim == 3:
        return (0, 2)
    if x.ndim == 2:
        return (0,)
    raise ShapeError(f"batch_norm: expected B x C x T or B x F input, got shape {x.shape}")


def _affine_shape(x):
    return (1, -1, 1) if x.ndim == 3 else (1, -1)


def normalize_forward(x, gamma, beta, eps, axes):
    """Standardize over ``axes`` with population statistics, then scale/shift."""
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    shp = _affine_shape(x)
    out = xhat * gamma.reshape(shp) + beta.reshape(shp)
    return out, (xhat, inv_std, gamma, axes), mean, var


def normalize_backward(grad, cache):
    """Exact gradient through the batch statistics."""
    xhat, inv_std, gamma, axes = cache
    shp = _affine_shape(grad)
    param_axes = (0, 2) if grad.ndim == 3 else (0,)
    d_gamma = (grad * xhat).sum(axis=param_axes)
    d_beta = grad.sum(axis=param_axes)
    dxhat = grad * gamma.reshape(shp)
    n = 1
    for a in axes:
        n *= grad.shape[a]
    mean_d = dxhat.mean(axis=axes, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
    dx = inv_std * (dxhat - mean_d - xhat * mean_dx)
    return dx, d_gamma, d_beta


def frozen_normalize_forward(x, gamma, beta, mean, var, eps):
    shp = _affine_shape(x)
    inv_std = 1.0 / np.sqrt(var.reshape(shp) + eps)
    xhat = (x - mean.reshape(shp)) * inv_std
    return xhat * gamma.reshape(shp) + beta.reshape(shp), (xhat, inv_std, gamma)


def frozen_normalize_backward(grad, cache):
    xhat, inv_std, gamma = cache
    shp = _affine_shape(grad)
    param_axes = (0, 2) if grad.ndim == 3 else (0,)
    return grad * gamma.reshape(shp) * inv_std, (grad * xhat).sum(axis=param_axes), grad.sum(axis=param_axes)


# ---------------------------------------------------------------- pooling / loss


def global_avg_pool_forward(x):
    if x.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool: expected B x C x T input with T >= 1, got shape {x.shape}")
    return x.mean(axis=2), x.shape[2]


def global_avg_pool_backward(grad, length):
    return np.repeat(grad[:, :, None] / length, length, axis=2)


def global_avg_pool(x):
    return global_avg_pool_forward(np.asarray(x))[0]


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, n_labels: int | None = None):
    """Mean negative log-likelihood and the softmax probabilities.

    Returns ``(loss, probs, grad)`` where ``grad = (probs - onehot) / B``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1] if n_labels is None else n_labels
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at index {i} outside 0..{k - 1}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits entering softmax_cross_entropy")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(lse - shifted[rows, labels]))
    probs = np.exp(shifted - lse[:, None])
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= len(labels)
    return loss, probs, grad


# ---------------------------------------------------------------- lstm


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(x, weights, bias, h0=None, c0=None):
    """Unrolled single-layer LSTM.

    Args:
        x: ``B x C x T`` input.
        weights: fused gate matrix ``4H x (C + H)``, gate order (input, forget, candidate, output).
        bias: ``4H`` vector.
        h0, c0: ``B x H`` initial states (zeros when omitted).

    Returns:
        ``(hidden_seq B x H x T, (h_T, c_T), cache)``.
    """
    B, C, T = x.shape
    four_h, width = weights.shape
    H = four_h // 4
    if width != C + H or four_h != 4 * H:
        raise ShapeError(f"lstm: input shape {x.shape} incompatible with weights shape {weights.shape}")
    dt = x.dtype
    h = np.zeros((B, H), dt) if h0 is None else np.asarray(h0, dtype=dt)
    c = np.zeros((B, H), dt) if c0 is None else np.asarray(c0, dtype=dt)
    if h.shape != (B, H) or c.shape != (B, H):
        raise ShapeError(f"lstm: h0/c0 shapes {h.shape}/{c.shape}, expected {(B, H)}")
    w_x = weights[:, :C]
    w_h = weights[:, C:]
    xt = np.ascontiguousarray(x.transpose(2, 0, 1))  # T x B x C
    zx = (xt.reshape(T * B, C) @ w_x.T).reshape(T, B, four_h) + bias
    hs = np.empty((T + 1, B, H), dt)
    cs = np.empty((T + 1, B, H), dt)
    gates = np.empty((T, B, four_h), dt)
    tanh_c = np.empty((T, B, H), dt)
    hs[0], cs[0] = h, c
    for t in range(T):
        z = zx[t] + hs[t] @ w_h.T
        g = gates[t]
        g[:, :2 * H] = _sigmoid(z[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cs[t + 1] = g[:, H:2 * H] * cs[t] + g[:, :H] * g[:, 2 * H:3 * H]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = g[:, 3 * H:] * tanh_c[t]
        if not (np.isfinite(hs[t + 1]).all() and np.isfinite(cs[t + 1]).all()):
            raise NumericError(f"lstm: non-finite activation at timestep {t}")
    hidden = np.ascontiguousarray(hs[1:].transpose(1, 2, 0))
    cache = (xt, w_x, w_h, hs, cs, gates, tanh_c)
    return hidden, (hs[T].copy(), cs[T].copy()), cache


def lstm_backward(cache, d_last_h=None, d_hidden=None, d_last_c=None):
    """Backprop through time.

    ``d_last_h`` is the gradient on the final hidden state, ``d_hidden`` an
    optional ``B x H x T`` gradient on the whole hidden sequence.
    Returns ``(d_x, d_weights, d_bias, d_h0, d_c0)``.
    """
    xt, w_x, w_h, hs, cs, gates, tanh_c = cache
    T, B, C = xt.shape
    H = w_h.shape[1]
    dt = xt.dtype
    dh = np.zeros((B, H), dt) if d_last_h is None else d_last_h.astype(dt, copy=True)
    dc = np.zeros((B, H), dt) if d_last_c is None else d_last_c.astype(dt, copy=True)
    d_seq = None if d_hidden is None else d_hidden.transpose(2, 0, 1)
    dz = np.empty((T, B, 4 * H), dt)
    for t in range(T - 1, -1, -1):
        if d_seq is not None:
            dh = dh + d_seq[t]
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = tanh_c[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :H] = dc * gg * i * (1.0 - i)
        d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        d[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc = dc * f
        dh = d @ w_h
    flat = dz.reshape(T * B, 4 * H)
    d_wx = flat.T @ xt.reshape(T * B, C)
    d_wh = flat.T @ hs[:-1].reshape(T * B, H)
    d_bias = flat.sum(axis=0)
    d_x = (flat @ w_x).reshape(T, B, C).transpose(1, 2, 0)
    return np.ascontiguousarray(d_x), np.concatenate([d_wx, d_wh], axis=1), d_bias, dh, dc
