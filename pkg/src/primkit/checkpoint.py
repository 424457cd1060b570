"""Checkpoint directories: ``manifest.json`` plus ``params.bin``.

``params.bin`` is every array flattened to little-endian float32 and
concatenated in manifest order. Integer arrays (forest node tables) are
stored through float32 too, which is exact below 2**24 and checked on
save. The manifest holds no timestamps, so saving the same model twice
produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    FamilyMismatchError,
    IncompatibleFeaturesError,
)
from .forest import DecisionTree, ForestConfig, RandomForest
from .models import ModelSpec, NeuralClassifier, build_model

FORMAT = "primkit-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
PARAMS = "params.bin"
_DT = np.dtype("<f4")
_INT_LIMIT = 2 ** 24
_TREE_FIELDS = ("feature", "threshold", "left", "right", "counts")


def _write(path: Path, manifest: dict, arrays: list) -> None:
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, arr, kind in arrays:
        a = np.asarray(arr)
        if kind == "int" and a.size and np.max(np.abs(a)) >= _INT_LIMIT:
            raise CheckpointFormatError(f"integer array {name!r} exceeds float32-exact range")
        flat = a.astype(_DT).ravel()
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "kind": kind})
        chunks.append(flat.tobytes())
        offset += flat.size
    manifest = {"format": FORMAT, "version": VERSION, **manifest, "arrays": index}
    (path / PARAMS).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read(path: Path):
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise CheckpointFormatError(f"{path}: no {MANIFEST}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path / MANIFEST}: invalid JSON ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointFormatError(f"{path}: not a {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {manifest.get('version')!r} is not supported (expected {VERSION})")
    try:
        raw = (path / PARAMS).read_bytes()
    except FileNotFoundError:
        raise CheckpointFormatError(f"{path}: no {PARAMS}") from None
    data = np.frombuffer(raw, dtype=_DT) if len(raw) % 4 == 0 else None
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if data is None or start + size > len(data):
            raise CheckpointFormatError(f"{path / PARAMS}: truncated at array {entry['name']!r}")
        a = data[start:start + size].reshape(shape)
        arrays[entry["name"]] = a.astype(np.int64) if entry["kind"] == "int" else a.copy()
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in manifest["arrays"])
    if data is None or len(data) != expected:
        raise CheckpointFormatError(f"{path / PARAMS}: size {len(raw)} bytes does not match manifest")
    return manifest, arrays


def save_checkpoint(model, path) -> None:
    """Write a NeuralClassifier or RandomForest to directory ``path``."""
    path = Path(path)
    if isinstance(model, RandomForest):
        arrays = []
        for i, tree in enumerate(model.trees):
            for f in _TREE_FIELDS:
                arrays.append((f"tree{i}.{f}", getattr(tree, f), "float" if f == "threshold" else "int"))
        manifest = {"family": "forest", "spec": {"config": model.config.to_dict(), "n_features": model.n_features,
                                                   "n_trees": len(model.trees)},
                    "feature_order_hash": model.feature_hash, "channel_names": model.channel_names,
                    "training": {"oob_accuracy": model.oob_accuracy}}
    elif isinstance(model, NeuralClassifier):
        arrays = [(name, a, "float") for name, a in model.graph.state_arrays().items()]
        manifest = {"family": "neural", "spec": model.spec.to_dict(), "feature_order_hash": model.feature_hash,
                    "channel_names": model.channel_names, "training": model.metadata}
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")
    _write(path, manifest, arrays)


def load_checkpoint(path, expected_family: str | None = None):
    """Load a checkpoint directory; ``expected_family`` is 'neural' or 'forest'."""
    manifest, arrays = _read(Path(path))
    family = manifest.get("family")
    if expected_family is not None and family != expected_family:
        raise FamilyMismatchError(f"{path}: checkpoint holds a {family!r} model, expected {expected_family!r}")
    if family == "forest":
        spec = manifest["spec"]
        trees = [DecisionTree(**{f: arrays[f"tree{i}.{f}"] for f in _TREE_FIELDS}) for i in range(spec["n_trees"])]
        for t in trees:
            t.threshold = t.threshold.astype(np.float32)
        return RandomForest(ForestConfig(**spec["config"]), spec["n_features"], trees,
                            manifest.get("feature_order_hash"), manifest["training"].get("oob_accuracy"),
                            manifest.get("channel_names"))
    if family == "neural":
        spec = ModelSpec.from_dict(manifest["spec"])
        graph = build_model(spec, np.random.default_rng(0))
        expected = graph.state_arrays()
        if set(expected) != set(arrays):
            raise CheckpointFormatError(f"{path}: array names do not match the model spec")
        for name, a in arrays.items():
            if expected[name].shape != a.shape:
                raise CheckpointFormatError(f"{path}: array {name!r} has shape {a.shape}, "
                                            f"spec expects {expected[name].shape}")
        graph.load_state_arrays(arrays)
        graph.eval()
        return NeuralClassifier(spec, graph, manifest.get("feature_order_hash"), manifest.get("channel_names"),
                                manifest.get("training"))
    raise FamilyMismatchError(f"{path}: unknown model family {family!r}")


def check_compatible(model, feature_hash: str | None) -> None:
    """Raise unless the model was trained on data with ``feature_hash``."""
    stored = getattr(model, "feature_hash", None)
    if stored is not None and feature_hash is not None and stored != feature_hash:
        raise IncompatibleFeaturesError(
            f"model was trained on feature layout {stored}, data has layout {feature_hash}")
