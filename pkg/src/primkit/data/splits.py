"""Patient-level stratified cross-validation splits."""

from __future__ import annotations

from ..errors import ConfigError
from ..rng import derive_rng


def split_patients(metas, n_splits: int = 4, seed: int = 0):
    """Partition patients into ``n_splits`` validation folds.

    Patients are grouped into (impairment band, paretic side) strata. Each
    stratum is shuffled with the split stream of ``seed`` and dealt
    round-robin; the dealing pointer carries over between strata so fold
    sizes differ by at most one overall as well as within every stratum.

    Returns a list of ``(train_ids, val_ids)`` with ids sorted.
    """
    if n_splits < 2:
        raise ConfigError(f"n_splits must be >= 2, got {n_splits}")
    metas = sorted(metas, key=lambda m: m.patient_id)
    if len(metas) < n_splits:
        raise ConfigError(f"{len(metas)} patients cannot fill {n_splits} folds")
    strata = {}
    for m in metas:
        strata.setdefault(m.stratum, []).append(m.patient_id)
    rng = derive_rng(seed, "split")
    folds = [[] for _ in range(n_splits)]
    pointer = 0
    for key in sorted(strata):
        ids = strata[key]
        for j in rng.permutation(len(ids)):
            folds[pointer % n_splits].append(ids[j])
            pointer += 1
    everyone = [m.patient_id for m in metas]
    out = []
    for fold in folds:
        val = sorted(fold)
        held = set(val)
        out.append(([p for p in everyone if p not in held], val))
    return out
