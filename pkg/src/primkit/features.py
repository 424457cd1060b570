"""Per-channel summary statistics for the feature-based baselines.

Each window of ``C`` channels becomes a flat vector of ``5 * C`` values,
laid out channel-major with the statistics in the fixed order of
``STAT_NAMES``. The order is part of the model contract: fitted forests
and FCNN checkpoints store :func:`feature_order_hash` and refuse data
built with a different layout.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .data.windows import Window, WindowSet
from .errors import DegenerateInputError, ShapeError
from .primitives import PRIMITIVE_NAMES

STAT_NAMES = ("mean", "max", "min", "std", "rms")
N_STATS = len(STAT_NAMES)
_CHUNK = 2048


def _as_block(window) -> np.ndarray:
    if isinstance(window, Window):
        return window.features
    return np.asarray(window)


def _stats(x: np.ndarray) -> np.ndarray:
    """Statistics over the last axis of ``... x C x W``; returns ``... x C x 5`` float64."""
    x = x.astype(np.float64, copy=False)
    mean = x.mean(axis=-1)
    centered = x - mean[..., None]
    std = np.sqrt(np.mean(centered * centered, axis=-1))
    rms = np.sqrt(np.mean(x * x, axis=-1))
    return np.stack([mean, x.max(axis=-1), x.min(axis=-1), std, rms], axis=-1)


def compute_window_features(window) -> np.ndarray:
    """Feature vector of one window.

    Args:
        window: a :class:`Window` or a ``C x W`` array.

    Returns:
        float64 vector of length ``5 * C``.
    """
    x = _as_block(window)
    if x.ndim != 2:
        raise ShapeError(f"expected a C x W window, got shape {x.shape}")
    if x.shape[1] < 1:
        raise DegenerateInputError("cannot compute statistics of an empty window")
    return _stats(x).reshape(-1)


def compute_features(windows) -> np.ndarray:
    """Feature matrix (``N x 5C``) for a WindowSet, a list of windows or an ``N x C x W`` array."""
    if isinstance(windows, WindowSet):
        n = len(windows)
        out = np.empty((n, N_STATS * windows.n_channels), dtype=np.float64)
        if windows.width < 1 and n:
            raise DegenerateInputError("cannot compute statistics of an empty window")
        for s in range(0, n, _CHUNK):
            idx = np.arange(s, min(n, s + _CHUNK))
            out[idx] = _stats(windows.batch(idx)).reshape(len(idx), -1)
        return out
    if isinstance(windows, np.ndarray):
        if windows.ndim != 3:
            raise ShapeError(f"expected an N x C x W array, got shape {windows.shape}")
        if windows.shape[2] < 1:
            raise DegenerateInputError("cannot compute statistics of an empty window")
        return _stats(windows).reshape(windows.shape[0], -1)
    rows = [compute_window_features(w) for w in windows]
    return np.stack(rows) if rows else np.empty((0, 0))


def feature_names(n_channels: int) -> list:
    return [f"ch{i}_{stat}" for i in range(n_channels) for stat in STAT_NAMES]


def feature_order_hash(channel_names) -> str:
    """Fingerprint of the channel list together with the statistic order."""
    payload = json.dumps({"channels": list(channel_names), "stats": list(STAT_NAMES)})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def export_feature_csv(path, features, labels) -> None:
    """Write one row per window with a ``ch{i}_{stat}`` header and a ``label`` column."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] % N_STATS or len(labels) != len(features):
        raise ShapeError(f"feature matrix {features.shape} and labels {labels.shape} do not align")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_names(features.shape[1] // N_STATS) + ["label"])
        for row, lab in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [PRIMITIVE_NAMES[int(lab)]])
