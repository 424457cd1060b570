"""Recording and patient metadata records."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..errors import ConfigError, ContractError
from .schema import ChannelSchema

SAMPLE_RATE_HZ = 100


def impairment_band(fma_score: int) -> str:
    """FMA upper-extremity score to impairment band (mild 53+, moderate 26-52, severe 0-25)."""
    if not 0 <= fma_score <= 66:
        raise ConfigError(f"FMA score {fma_score} outside 0..66")
    if fma_score >= 53:
        return "mild"
    if fma_score >= 26:
        return "moderate"
    return "severe"


@dataclass(frozen=True)
class PatientMeta:
    patient_id: str
    paretic_side: str
    fma_score: int

    def __post_init__(self):
        if self.paretic_side not in ("left", "right"):
            raise ConfigError(f"paretic_side must be 'left' or 'right', got {self.paretic_side!r}")
        impairment_band(self.fma_score)

    @property
    def impairment(self) -> str:
        return impairment_band(self.fma_score)

    @property
    def stratum(self) -> tuple:
        return (self.impairment, self.paretic_side)


@dataclass(frozen=True, eq=False)
class Recording:
    """One activity repetition of one patient.

    ``values`` is ``T x C`` where ``C`` covers the schema's sensor channels,
    plus its context channels once ``context_attached`` is set. ``labels``
    holds primitive codes, with -1 for unlabeled samples.
    """

    patient_id: str
    activity_id: str
    repetition_index: int
    values: np.ndarray
    labels: np.ndarray
    schema: ChannelSchema
    sample_rate_hz: int = SAMPLE_RATE_HZ
    context_attached: bool = False
    normalized: bool = field(default=False)

    def __post_init__(self):
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ConfigError(f"sample rate fixed at {SAMPLE_RATE_HZ} Hz, got {self.sample_rate_hz}")
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int8)
        if values.ndim != 2 or labels.ndim != 1 or values.shape[0] != labels.shape[0]:
            raise ContractError(f"values {values.shape} and labels {labels.shape} disagree on T")
        expected = len(self.schema) if self.context_attached else self.schema.sensor_dim
        if values.shape[1] != expected:
            raise ContractError(f"recording has {values.shape[1]} channels, schema expects {expected}")
        values.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def channel_names(self) -> list:
        return self.schema.names if self.context_attached else self.schema.sensor_names

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @cached_property
    def channels_first(self) -> np.ndarray:
        """``C x T`` float32 copy used for window gathering."""
        arr = np.ascontiguousarray(self.values.T, dtype=np.float32)
        arr.flags.writeable = False
        return arr

    def with_values(self, values, **changes) -> "Recording":
        return replace(self, values=values, **changes)

    @property
    def key(self) -> tuple:
        return (self.patient_id, self.activity_id, self.repetition_index)
