"""Per-repetition normalization and context channels."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DegenerateInputError
from .recording import PatientMeta, Recording

#: channels whose std falls below this are centered but not rescaled
STD_FLOOR = 1e-8


def normalize_repetition(rec: Recording) -> Recording:
    """Center each channel and divide by its population std over this repetition.

    Every channel is normalized except the paretic-side flag.
    """
    if rec.n_samples < 2:
        raise DegenerateInputError(f"recording {rec.key} has {rec.n_samples} samples; need at least 2")
    values = np.array(rec.values, dtype=np.float64)
    skip = set(rec.schema.index_of_kind("paretic_flag")) if rec.context_attached else set()
    cols = [i for i in range(values.shape[1]) if i not in skip]
    block = values[:, cols]
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    values[:, cols] = (block - mean) / std
    return rec.with_values(values, normalized=True)


def attach_context(rec: Recording, meta: PatientMeta) -> Recording:
    """Append the elapsed-time (seconds) and paretic-side (0 left, 1 right) channels."""
    if rec.context_attached:
        raise ContractError(f"context already attached to recording {rec.key}")
    if meta.patient_id != rec.patient_id:
        raise ContractError(f"metadata for {meta.patient_id!r} applied to recording of {rec.patient_id!r}")
    ctx = rec.schema.context_channels
    if not ctx:
        raise ContractError("schema has no context channels to attach")
    T = rec.n_samples
    cols = []
    for c in ctx:
        if c.kind == "time_elapsed":
            cols.append(np.arange(T, dtype=np.float64) / rec.sample_rate_hz)
        else:
            cols.append(np.full(T, 1.0 if meta.paretic_side == "right" else 0.0))
    values = np.concatenate([rec.values, np.stack(cols, axis=1)], axis=1)
    return rec.with_values(values, context_attached=True)


def prepare_recording(rec: Recording, meta: PatientMeta, normalize: bool = True) -> Recording:
    """Attach context if missing, then optionally normalize (time included, flag exempt)."""
    if not rec.context_attached and rec.schema.context_channels:
        rec = attach_context(rec, meta)
    if normalize and not rec.normalized:
        rec = normalize_repetition(rec)
    return rec
