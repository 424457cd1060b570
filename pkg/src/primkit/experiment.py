"""Experiment orchestration: cross-validated training, ensembled evaluation and prediction.

These functions back the command-line interface but take plain objects,
so tests and scripts can drive a whole experiment in memory.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .data import WindowSet, extract_all, extract_windows, load_dataset, prepare_recording, split_patients
from .errors import ConfigError, ContractError, PrimkitError
from .evaluation import (
    accuracy,
    balanced_accuracy,
    ensemble_proba,
    metrics_report,
    per_patient_metrics,
    probability_letter_values,
    window_composition,
    write_composition_csv,
    write_confusion_csv,
    write_letter_values_csv,
    write_metrics_json,
    write_per_patient_csv,
)
from .features import compute_features, feature_order_hash
from .forest import ForestConfig, RandomForest, fit_forest
from .models import FAMILIES, ModelSpec, NeuralClassifier, desk_spec
from .primitives import PRIMITIVE_NAMES
from .rng import derive_rng
from .training import TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass
class DataConfig:
    window_s: float = 2.0
    train_stride: int = 25
    eval_stride: int = 10
    normalize: bool = True

    def __post_init__(self):
        if self.train_stride < 1 or self.eval_stride < 1:
            raise ConfigError("strides must be >= 1")


def _default_models():
    return [{"name": "cnn-in-emb", "preset": "cnn"}]


@dataclass
class ExperimentConfig:
    """Everything a cv/evaluate run needs; round-trips through JSON unchanged.

    ``models`` holds one entry per setting. An entry is a dict with a
    ``name`` plus either ``preset`` (a desk preset name, remaining keys
    override it), ``family: "forest"`` (remaining keys are forest options),
    or plain model-spec fields. ``n_channels`` is filled in from the data.
    """

    train_manifest: str | None = None
    test_manifest: str | None = None
    models: list = field(default_factory=_default_models)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    data: DataConfig = field(default_factory=DataConfig)
    n_splits: int = 4
    seed: int = 0
    out: str = "runs"
    n_jobs: int = 1

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.forest, dict):
            self.forest = ForestConfig(**self.forest)
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        if self.n_splits < 2:
            raise ConfigError(f"n_splits must be >= 2, got {self.n_splits}")
        names = [m.get("name") for m in self.models]
        if not self.models or any(not n for n in names) or len(set(names)) != len(names):
            raise ConfigError("models must be a non-empty list of entries with unique 'name' keys")

    def to_dict(self) -> dict:
        return {"train_manifest": self.train_manifest, "test_manifest": self.test_manifest,
                "models": [dict(m) for m in self.models], "train": self.train.to_dict(),
                "forest": self.forest.to_dict(), "data": asdict(self.data), "n_splits": self.n_splits,
                "seed": self.seed, "out": self.out, "n_jobs": self.n_jobs}

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from None

    def check_paths(self, *keys) -> None:
        for key in keys:
            value = getattr(self, key)
            if value is None:
                raise ConfigError(f"{key} is required")
            if not Path(value).exists():
                raise ConfigError(f"{key} {value!r} does not exist")


def resolve_model(entry: dict, n_channels: int, forest_defaults: ForestConfig | None = None):
    """Turn a model entry into ``("neural", ModelSpec)`` or ``("forest", ForestConfig)``."""
    rest = {k: v for k, v in entry.items() if k != "name"}
    preset = rest.pop("preset", None)
    if rest.get("family") == "forest":
        rest.pop("family")
        base = (forest_defaults or ForestConfig()).to_dict()
        base.update(rest)
        try:
            return "forest", ForestConfig(**base)
        except TypeError as exc:
            raise ConfigError(f"model {entry.get('name')!r}: {exc}") from None
    try:
        if preset is not None:
            return "neural", desk_spec(preset, n_channels, **rest)
        if rest.get("family") not in FAMILIES:
            raise ConfigError(f"model {entry.get('name')!r} needs a preset or a family in {FAMILIES + ('forest',)}")
        return "neural", ModelSpec(**{"n_channels": n_channels, **rest})
    except TypeError as exc:
        raise ConfigError(f"model {entry.get('name')!r}: {exc}") from None


def prepare_cohort(recordings, metas, data: DataConfig):
    return [prepare_recording(r, metas[r.patient_id], data.normalize) for r in recordings]


def windows_for(recordings, data: DataConfig, stride: int) -> WindowSet:
    return extract_all(recordings, data.window_s, stride)


def load_cohort(manifest_path, data: DataConfig):
    """``(prepared recordings, metas)`` of a dataset manifest."""
    _, recs, metas = load_dataset(manifest_path)
    return prepare_cohort(recs, metas, data), metas


@dataclass
class FoldResult:
    name: str
    fold: int
    val_score: float
    model: object
    history: list = field(default_factory=list)


def train_member(kind, spec, train_ws: WindowSet, val_ws: WindowSet, train_cfg: TrainConfig, seed: int,
                 name: str, fold: int):
    """Fit one model on ``train_ws`` and score it on ``val_ws``. Returns a FoldResult."""
    fhash = feature_order_hash(train_ws.channel_names)
    if kind == "forest":
        cfg = replace(spec, seed=int(derive_rng(seed, "forest-fold", name, fold).integers(2 ** 31)))
        model = fit_forest(compute_features(train_ws), train_ws.labels, cfg, feature_hash=fhash)
        model.channel_names = train_ws.channel_names
        preds = model.predict(compute_features(val_ws))
        metric = balanced_accuracy if train_cfg.val_metric == "balanced_accuracy" else accuracy
        return FoldResult(name, fold, metric(preds, val_ws.labels), model)
    if spec.n_channels != train_ws.n_channels:
        raise ContractError(f"model expects {spec.n_channels} channels, data has {train_ws.n_channels}")
    model = NeuralClassifier.build(spec, derive_rng(seed, "init", name, fold), fhash, train_ws.channel_names)
    res = fit(model, train_ws, val_ws, replace(train_cfg, seed=seed), stream=(name, fold))
    model.metadata["fold"] = fold
    return FoldResult(name, fold, res.best_val_score, model, res.history)


def _fold_task(args):
    cfg_dict, entry, fold, recs, metas = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return _run_fold(cfg, entry, fold, recs, metas)


def _run_fold(cfg: ExperimentConfig, entry: dict, fold: int, recs, metas) -> FoldResult:
    splits = split_patients(list(metas.values()), cfg.n_splits, cfg.seed)
    train_ids, val_ids = splits[fold]
    tr = set(train_ids)
    train_ws = windows_for([r for r in recs if r.patient_id in tr], cfg.data, cfg.data.train_stride)
    val_ws = windows_for([r for r in recs if r.patient_id in set(val_ids)], cfg.data, cfg.data.train_stride)
    kind, spec = resolve_model(entry, train_ws.n_channels, cfg.forest)
    try:
        return train_member(kind, spec, train_ws, val_ws, cfg.train, cfg.seed, entry["name"], fold)
    except PrimkitError as exc:
        raise type(exc)(f"fold {fold} of {entry['name']!r}: {exc}") from exc


@dataclass
class CVResult:
    rows: list  # (name, [fold scores])
    checkpoints: dict  # name -> [paths]

    def average(self, name) -> float:
        scores = dict(self.rows)[name]
        return float(np.mean(scores))


def _n_workers(requested: int) -> int:
    cap = os.environ.get("PRIMKIT_THREADS")
    n = requested if requested > 0 else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_cv(cfg: ExperimentConfig, recs=None, metas=None, write: bool = True) -> CVResult:
    """Train one model per (setting, fold); write checkpoints and the validation table under ``cfg.out``.

    ``recs``/``metas`` may be passed directly (already prepared); otherwise
    ``cfg.train_manifest`` is loaded.
    """
    if recs is None:
        cfg.check_paths("train_manifest")
        recs, metas = load_cohort(cfg.train_manifest, cfg.data)
    out = Path(cfg.out)
    present = {r.patient_id for r in recs}
    metas = {k: v for k, v in metas.items() if k in present}
    jobs = [(entry, fold) for entry in cfg.models for fold in range(cfg.n_splits)]
    workers = min(_n_workers(cfg.n_jobs), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fold_task, [(cfg.to_dict(), e, f, recs, metas) for e, f in jobs]))
    else:
        results = [_run_fold(cfg, e, f, recs, metas) for e, f in jobs]

    rows, checkpoints = [], {}
    for entry in cfg.models:
        mine = [r for r in results if r.name == entry["name"]]
        rows.append((entry["name"], [r.val_score for r in mine]))
        if write:
            paths = []
            for r in mine:
                path = out / entry["name"] / f"fold{r.fold}"
                save_checkpoint(r.model, path)
                paths.append(str(path))
            checkpoints[entry["name"]] = paths
        else:
            checkpoints[entry["name"]] = [r.model for r in mine]
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_val_table(out / "val_table.csv", rows, cfg.n_splits)
        (out / "val_table.txt").write_text(format_val_table(rows, cfg.n_splits) + "\n", encoding="utf-8")
        history = {r.name: {} for r in results}
        for r in results:
            history[r.name][str(r.fold)] = r.history
        (out / "cv_history.json").write_text(json.dumps(history, indent=1, sort_keys=True) + "\n")
        (out / "experiment.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return CVResult(rows, checkpoints)


def write_val_table(path, rows, n_splits: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting"] + [f"split{i + 1}" for i in range(n_splits)] + ["Average"])
        for name, scores in rows:
            w.writerow([name] + [repr(float(s)) for s in scores] + [repr(float(np.mean(scores)))])


def format_val_table(rows, n_splits: int) -> str:
    width = max([len("setting")] + [len(n) for n, _ in rows]) + 2
    head = "setting".ljust(width) + "".join(f"split{i + 1}".rjust(9) for i in range(n_splits)) + "Average".rjust(9)
    lines = [head]
    for name, scores in rows:
        lines.append(name.ljust(width) + "".join(f"{100 * s:9.2f}" for s in scores) + f"{100 * np.mean(scores):9.2f}")
    return "\n".join(lines)


def member_proba(model, windows: WindowSet) -> np.ndarray:
    """Class probabilities of one checkpointed model on ``windows``."""
    check_compatible(model, feature_order_hash(windows.channel_names))
    if isinstance(model, RandomForest):
        return model.predict_proba(compute_features(windows))
    if model.spec.n_channels != windows.n_channels:
        raise ContractError(f"model expects {model.spec.n_channels} channels, data has {windows.n_channels}")
    return model.predict_windows(windows)


@dataclass
class EvalResult:
    report: object
    proba: np.ndarray
    member_scores: list
    windows: WindowSet


def evaluate_models(models, windows: WindowSet, metas=None, out=None) -> EvalResult:
    """Ensemble ``models`` by probability averaging on ``windows``; optionally write every analysis file."""
    if not models:
        raise ConfigError("need at least one model to evaluate")
    if len(windows) == 0:
        raise ConfigError("evaluation set has no windows")
    probas = [member_proba(m, windows) for m in models]
    member_scores = [balanced_accuracy(np.argmax(p, 1), windows.labels) for p in probas]
    proba = ensemble_proba(probas)
    preds = np.argmax(proba, axis=1)
    report = metrics_report(preds, windows.labels)
    report.extra["member_balanced_accuracy"] = member_scores
    report.extra["n_members"] = len(models)
    lv = probability_letter_values(proba, windows.labels)
    comp = window_composition(windows.timestep_labels(), preds, windows.labels)
    report.extra["letter_value_median_above_0.6"] = {
        name: bool(flag) for name, flag in zip(PRIMITIVE_NAMES, lv.median_above_threshold)}
    report.extra["composition"] = comp.summary()
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_json(out / "metrics.json", report)
        (out / "metrics.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        write_confusion_csv(out / "confusion.csv", report.confusion)
        write_letter_values_csv(out / "letter_values.csv", lv)
        write_composition_csv(out / "composition.csv", comp)
        fma = {pid: m.fma_score for pid, m in (metas or {}).items()}
        write_per_patient_csv(out / "per_patient.csv",
                              per_patient_metrics(windows.patient_ids, preds, windows.labels, fma))
    return EvalResult(report, proba, member_scores, windows)


def evaluate_checkpoints(paths, manifest_path, data: DataConfig, out=None) -> EvalResult:
    models = [load_checkpoint(p) for p in paths]
    recs, metas = load_cohort(manifest_path, data)
    return evaluate_models(models, windows_for(recs, data, data.eval_stride), metas, out)


def predict_rows(model, recording, data: DataConfig, stride: int = 1) -> list:
    """``(timestamp_s, p0..p4, label)`` for every window center of one prepared recording.

    Unlabeled samples still receive predictions; only the flanking half
    windows at each end go without.
    """
    W = int(round(data.window_s * recording.sample_rate_hz))
    if recording.n_samples < W:
        raise ConfigError(f"recording has {recording.n_samples} samples, shorter than one {W}-sample window")
    # predict every center regardless of its label
    probe = recording.with_values(recording.values, labels=np.zeros(recording.n_samples, dtype=np.int8))
    ws = extract_windows(probe, data.window_s, stride)
    proba = member_proba(model, ws)
    times = ws.centers / recording.sample_rate_hz
    labels = np.argmax(proba, axis=1)
    return [(float(t), *map(float, p), PRIMITIVE_NAMES[k]) for t, p, k in zip(times, proba, labels)]


def write_predictions(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_s"] + [f"p_{n}" for n in PRIMITIVE_NAMES] + ["label"])
        for row in rows:
            w.writerow([repr(row[0])] + [repr(v) for v in row[1:6]] + [row[6]])
