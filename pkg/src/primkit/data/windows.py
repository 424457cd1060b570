"""Center-labeled window extraction."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from ..primitives import N_PRIMITIVES, PRIMITIVE_NAMES, UNLABELED
from .recording import Recording

WINDOW_SECONDS = 2.0


def window_length(window_s: float = WINDOW_SECONDS, sample_rate_hz: int = 100) -> int:
    return int(round(window_s * sample_rate_hz))


def window_count(T: int, W: int, stride: int = 1) -> int:
    """Number of window positions before unlabeled centers are dropped."""
    return 0 if T < W else (T - W) // stride + 1


@dataclass(frozen=True, eq=False)
class Window:
    """A view of ``width`` samples of a recording around ``center_index``.

    The window spans ``[center - width // 2, center - width // 2 + width)``,
    so for even widths the center sits at position ``width // 2``.
    """

    recording: Recording
    center_index: int
    width: int

    @property
    def start(self) -> int:
        return self.center_index - self.width // 2

    @property
    def features(self) -> np.ndarray:
        """``C x W`` float32 block."""
        return self.recording.channels_first[:, self.start:self.start + self.width]

    @property
    def label(self) -> int:
        return int(self.recording.labels[self.center_index])

    @property
    def timestep_labels(self) -> np.ndarray:
        return self.recording.labels[self.start:self.start + self.width]

    @property
    def patient_id(self) -> str:
        return self.recording.patient_id


class WindowSet(Sequence):
    """Columnar collection of windows over a list of recordings.

    Window data is gathered on demand, so a set of many thousand windows
    costs only two index arrays.
    """

    def __init__(self, recordings, rec_index, centers, width, n_too_short=0):
        self.recordings = list(recordings)
        self.rec_index = np.asarray(rec_index, dtype=np.int64)
        self.centers = np.asarray(centers, dtype=np.int64)
        self.width = int(width)
        self.n_too_short = int(n_too_short)
        if self.rec_index.shape != self.centers.shape:
            raise ContractError("rec_index and centers must align")
        self.labels = np.array([self.recordings[r].labels[c] for r, c in zip(self.rec_index, self.centers)],
                               dtype=np.int64)

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        return Window(self.recordings[self.rec_index[i]], int(self.centers[i]), self.width)

    @property
    def n_channels(self) -> int:
        return self.recordings[0].channels_first.shape[0] if self.recordings else 0

    @property
    def patient_ids(self) -> np.ndarray:
        pids = np.array([r.patient_id for r in self.recordings], dtype=object)
        return pids[self.rec_index] if len(self) else np.array([], dtype=object)

    @property
    def channel_names(self) -> list:
        return self.recordings[0].channel_names if self.recordings else []

    def batch(self, idx=None) -> np.ndarray:
        """Gather windows ``idx`` into an ``N x C x W`` float32 array."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        half = self.width // 2
        out = np.empty((len(idx), self.n_channels, self.width), dtype=np.float32)
        for j, i in enumerate(idx):
            s = self.centers[i] - half
            out[j] = self.recordings[self.rec_index[i]].channels_first[:, s:s + self.width]
        return out

    def timestep_labels(self, idx=None) -> np.ndarray:
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        half = self.width // 2
        out = np.empty((len(idx), self.width), dtype=np.int8)
        for j, i in enumerate(idx):
            s = self.centers[i] - half
            out[j] = self.recordings[self.rec_index[i]].labels[s:s + self.width]
        return out

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = idx.astype(np.int64, copy=False)
        return WindowSet(self.recordings, self.rec_index[idx], self.centers[idx], self.width)

    def for_patients(self, patient_ids) -> "WindowSet":
        keep = set(patient_ids)
        return self.subset(np.array([p in keep for p in self.patient_ids], dtype=bool))

    @staticmethod
    def concat(sets) -> "WindowSet":
        sets = list(sets)
        if not sets:
            raise ContractError("cannot concatenate zero window sets")
        widths = {s.width for s in sets}
        if len(widths) != 1:
            raise ContractError(f"window widths differ: {sorted(widths)}")
        recs, ri, cs, offset = [], [], [], 0
        for s in sets:
            recs += s.recordings
            ri.append(s.rec_index + offset)
            cs.append(s.centers)
            offset += len(s.recordings)
        return WindowSet(recs, np.concatenate(ri), np.concatenate(cs), widths.pop(),
                         sum(s.n_too_short for s in sets))


def extract_windows(rec: Recording, window_s: float = WINDOW_SECONDS, stride_samples: int = 1) -> WindowSet:
    """All windows fully inside ``rec`` whose center sample is labeled.

    Centers step by ``stride_samples`` from ``W // 2``. A recording shorter
    than one window yields an empty set with ``n_too_short == 1``.
    """
    if stride_samples < 1:
        raise ConfigError(f"stride must be >= 1, got {stride_samples}")
    W = window_length(window_s, rec.sample_rate_hz)
    T = rec.n_samples
    if T < W:
        return WindowSet([rec], [], [], W, n_too_short=1)
    centers = np.arange(W // 2, T - (W - W // 2) + 1, stride_samples)
    centers = centers[rec.labels[centers] != UNLABELED]
    return WindowSet([rec], np.zeros(len(centers), dtype=np.int64), centers, W)


def extract_all(recordings, window_s: float = WINDOW_SECONDS, stride_samples: int = 1) -> WindowSet:
    return WindowSet.concat([extract_windows(r, window_s, stride_samples) for r in recordings])


def class_distribution(windows) -> dict:
    """Exact window counts per primitive (all five keys always present)."""
    if isinstance(windows, WindowSet):
        labels = windows.labels
    else:
        labels = np.array([w.label for w in windows], dtype=np.int64)
    counts = np.bincount(labels[labels >= 0], minlength=N_PRIMITIVES) if len(labels) else np.zeros(N_PRIMITIVES, int)
    return {name: int(counts[i]) for i, name in enumerate(PRIMITIVE_NAMES)}
