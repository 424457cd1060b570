"""Small labeled recordings shared by several test modules."""

import numpy as np

from primkit.data import Recording, compact_schema, extract_all
from primkit.nn import (
    LSTM,
    BatchNorm,
    Conv1d,
    Dense,
    DenseConcat,
    Dropout,
    GlobalAvgPool,
    InstanceNorm,
    ReLU,
    Residual,
    Sequential,
)

TOY_WINDOW_S = 0.16  # 16 samples


def toy_recordings(seed=0, n_patients=2, C=3, segments=10, seg_len=40, noise=0.1):
    """Recordings built from labeled segments whose channels carry class-specific offsets and tones."""
    rng = np.random.default_rng(seed)
    schema = compact_schema(C, include_context=False)
    t = np.arange(seg_len)
    recs = []
    for p in range(n_patients):
        labels = rng.integers(0, 5, segments)
        blocks = []
        for k in labels:
            base = np.stack([np.sin(2 * np.pi * (k + 1) * t / seg_len + c) + 0.5 * (k - 2) for c in range(C)], 1)
            blocks.append(base + noise * rng.normal(size=base.shape))
        recs.append(Recording(f"p{p}", "a", 0, np.concatenate(blocks), np.repeat(labels, seg_len), schema))
    return recs


def toy_windows(seed=0, n_patients=2, C=3, stride=4, **kw):
    return extract_all(toy_recordings(seed, n_patients, C, **kw), TOY_WINDOW_S, stride)


def layer_cases(rng, seed):
    """One small instance of each layer kind with a compatible input."""
    B = 2 + seed % 2
    C = 2 + seed % 3
    T = 4 + seed % 5
    f64 = np.float64
    return {
        "dense": (Dense(C, 3, rng=rng, dtype=f64), rng.normal(size=(B, C))),
        "conv1d": (Conv1d(C, 3, kernel_size=3, stride=1 + seed % 2, rng=rng, dtype=f64), rng.normal(size=(B, C, T))),
        "conv1d_grouped": (Conv1d(C, 2 * C, kernel_size=3, groups=C, rng=rng, dtype=f64), rng.normal(size=(B, C, T))),
        "relu": (ReLU(), rng.normal(size=(B, C, T))),
        "dropout": (Dropout(0.3, rng=rng), rng.normal(size=(B, C))),
        "batch_norm": (BatchNorm(C, dtype=f64), rng.normal(size=(B, C, T))),
        "batch_norm_flat": (BatchNorm(C, dtype=f64), rng.normal(size=(B + 1, C))),
        "instance_norm": (InstanceNorm(C, dtype=f64), rng.normal(size=(B, C, T))),
        "lstm": (LSTM(C, 3, rng=rng, dtype=f64), rng.normal(size=(B, C, T))),
        "global_avg_pool": (GlobalAvgPool(), rng.normal(size=(B, C, T))),
        "concat": (DenseConcat(Sequential(Conv1d(C, 2, rng=rng, dtype=f64), ReLU())), rng.normal(size=(B, C, T))),
        "residual_add": (Residual(Sequential(Conv1d(C, C, rng=rng, dtype=f64), InstanceNorm(C, dtype=f64))),
                         rng.normal(size=(B, C, T))),
    }
