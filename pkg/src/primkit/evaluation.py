"""Classification metrics, probability ensembling and analysis tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError
from .primitives import N_PRIMITIVES, PRIMITIVE_NAMES

#: quantile levels of the letter-value summary, innermost first
LETTER_LEVELS = (0.5, 0.25, 0.75, 0.125, 0.875, 0.0625, 0.9375)
MEDIAN_THRESHOLD = 0.6
# the median test uses >= with this slack so that a median that is 0.6
# in exact arithmetic is not lost to rounding
MEDIAN_TOL = 1e-12
N_BINS = 10


def _pair(preds, labels):
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ShapeError(f"{len(preds)} predictions vs {len(labels)} labels")
    return preds, labels


def accuracy(preds, labels) -> float:
    """Fraction of predictions equal to the label."""
    preds, labels = _pair(preds, labels)
    if len(labels) == 0:
        raise DegenerateInputError("accuracy of zero predictions is undefined")
    return float(np.count_nonzero(preds == labels) / len(labels))


def confusion(preds, labels, n_labels: int = N_PRIMITIVES) -> np.ndarray:
    """Count matrix with rows indexed by the true label and columns by the prediction."""
    preds, labels = _pair(preds, labels)
    if len(labels) and (min(preds.min(), labels.min()) < 0 or max(preds.max(), labels.max()) >= n_labels):
        raise ContractError(f"labels and predictions must lie in 0..{n_labels - 1}")
    return np.bincount(labels * n_labels + preds, minlength=n_labels * n_labels).reshape(n_labels, n_labels)


def normalize_rows(counts) -> np.ndarray:
    """Row-normalized fractions; empty rows stay all-zero."""
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def per_class_accuracy(preds, labels, n_labels: int = N_PRIMITIVES) -> np.ndarray:
    """``c_i / n_i`` per label; NaN where the label never occurs."""
    cm = confusion(preds, labels, n_labels)
    n = cm.sum(axis=1)
    out = np.full(n_labels, np.nan)
    present = n > 0
    out[present] = np.diag(cm)[present] / n[present]
    return out


def balanced_accuracy(preds, labels, n_labels: int = N_PRIMITIVES) -> float:
    """Mean per-label accuracy over the labels that occur in ``labels``."""
    per = per_class_accuracy(preds, labels, n_labels)
    if np.all(np.isnan(per)):
        raise DegenerateInputError("balanced accuracy of zero predictions is undefined")
    return float(np.mean(per[~np.isnan(per)]))


def ensemble_proba(proba_list) -> np.ndarray:
    """Arithmetic mean of member probability arrays."""
    members = [np.asarray(p, dtype=np.float64) for p in proba_list]
    if not members:
        raise ContractError("an ensemble needs at least one member")
    shape = members[0].shape
    for k, p in enumerate(members):
        if p.shape != shape:
            raise ContractError(f"member {k} has shape {p.shape}, expected {shape}")
    if len(members) == 1:
        return members[0].copy()
    total = members[0].copy()
    for p in members[1:]:
        total += p
    return total / len(members)


def letter_values(values, levels=LETTER_LEVELS) -> np.ndarray:
    """Quantiles at ``levels`` with linear interpolation; NaN for an empty sample."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.full(len(levels), np.nan)
    return np.quantile(values, levels, method="linear")


@dataclass
class LetterValueSummary:
    """``quantiles[t, s, k]``: level ``k`` of the probability given to primitive
    ``s`` over windows whose true primitive is ``t``."""

    quantiles: np.ndarray
    counts: np.ndarray
    levels: tuple = LETTER_LEVELS

    @property
    def ground_truth_median(self) -> np.ndarray:
        return np.array([self.quantiles[t, t, 0] for t in range(self.quantiles.shape[0])])

    @property
    def median_above_threshold(self) -> np.ndarray:
        """Per true primitive: at least half of its ground-truth probabilities reach 0.6."""
        med = self.ground_truth_median
        return np.where(np.isnan(med), False, med >= MEDIAN_THRESHOLD - MEDIAN_TOL)

    def rows(self):
        for t in range(self.quantiles.shape[0]):
            for s in range(self.quantiles.shape[1]):
                yield PRIMITIVE_NAMES[t], PRIMITIVE_NAMES[s], int(self.counts[t]), self.quantiles[t, s]


def probability_letter_values(probas, labels) -> LetterValueSummary:
    probas = np.asarray(probas, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probas.ndim != 2 or probas.shape[1] != N_PRIMITIVES or len(probas) != len(labels):
        raise ShapeError(f"probabilities {probas.shape} and labels {labels.shape} do not align")
    q = np.full((N_PRIMITIVES, N_PRIMITIVES, len(LETTER_LEVELS)), np.nan)
    counts = np.zeros(N_PRIMITIVES, dtype=np.int64)
    for t in range(N_PRIMITIVES):
        rows = probas[labels == t]
        counts[t] = len(rows)
        if len(rows):
            q[t] = np.quantile(rows, LETTER_LEVELS, axis=0, method="linear").T
    return LetterValueSummary(q, counts)


@dataclass
class WindowComposition:
    """Ten-bin histograms of within-window label content.

    ``correct_truth`` / ``incorrect_truth``: share of time steps carrying
    the window's true primitive, for correctly / incorrectly classified
    windows. ``incorrect_predicted``: share carrying the predicted
    primitive, for incorrect windows. Bin ``k`` covers ``[10k%, 10(k+1)%)``
    with 100% folded into the last bin.
    """

    correct_truth: np.ndarray
    incorrect_truth: np.ndarray
    incorrect_predicted: np.ndarray
    n_correct: int
    n_incorrect: int
    correct_with_other: int
    incorrect_without_predicted: int

    @property
    def frac_correct_with_other(self) -> float:
        return self.correct_with_other / self.n_correct if self.n_correct else float("nan")

    @property
    def frac_incorrect_without_predicted(self) -> float:
        return self.incorrect_without_predicted / self.n_incorrect if self.n_incorrect else float("nan")

    def summary(self) -> dict:
        return {
            "n_correct": self.n_correct,
            "n_incorrect": self.n_incorrect,
            "correct_windows_containing_other_primitives": self.frac_correct_with_other,
            "incorrect_windows_without_predicted_primitive": self.frac_incorrect_without_predicted,
        }


def composition_bin(count, width):
    return np.minimum((N_BINS * np.asarray(count)) // width, N_BINS - 1)


def window_composition(timestep_labels, preds, labels=None) -> WindowComposition:
    """Histograms over windows given their ``N x W`` per-time-step labels.

    ``labels`` defaults to the center time step of each window.
    """
    ts = np.asarray(timestep_labels)
    if ts.ndim != 2 or ts.shape[1] == 0:
        raise ContractError("window composition needs an N x W array of per-time-step labels")
    n, W = ts.shape
    preds = np.asarray(preds, dtype=np.int64)
    labels = ts[:, W // 2].astype(np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if len(preds) != n or len(labels) != n:
        raise ShapeError(f"{n} windows vs {len(preds)} predictions and {len(labels)} labels")
    truth_count = np.sum(ts == labels[:, None], axis=1)
    pred_count = np.sum(ts == preds[:, None], axis=1)
    other_count = np.sum((ts >= 0) & (ts != labels[:, None]), axis=1)
    ok = preds == labels
    hist = lambda c: np.bincount(composition_bin(c, W), minlength=N_BINS)  # noqa: E731
    return WindowComposition(
        correct_truth=hist(truth_count[ok]),
        incorrect_truth=hist(truth_count[~ok]),
        incorrect_predicted=hist(pred_count[~ok]),
        n_correct=int(ok.sum()),
        n_incorrect=int((~ok).sum()),
        correct_with_other=int(np.sum(other_count[ok] > 0)),
        incorrect_without_predicted=int(np.sum(pred_count[~ok] == 0)),
    )


@dataclass
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    n: int
    extra: dict = field(default_factory=dict)

    @property
    def confusion_normalized(self) -> np.ndarray:
        return normalize_rows(self.confusion)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "per_class_accuracy": {name: (None if np.isnan(v) else float(v))
                                   for name, v in zip(PRIMITIVE_NAMES, self.per_class)},
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized.tolist(),
            **self.extra,
        }

    def to_text(self) -> str:
        lines = [f"windows            {self.n}",
                 f"accuracy           {100 * self.accuracy:6.2f}%",
                 f"balanced accuracy  {100 * self.balanced_accuracy:6.2f}%", ""]
        width = max(len(n) for n in PRIMITIVE_NAMES) + 2
        lines.append("true \\ pred".ljust(width) + "".join(n[:10].rjust(12) for n in PRIMITIVE_NAMES)
                     + "acc".rjust(10))
        frac = self.confusion_normalized
        for i, name in enumerate(PRIMITIVE_NAMES):
            acc = "-" if np.isnan(self.per_class[i]) else f"{100 * self.per_class[i]:.1f}%"
            lines.append(name.ljust(width) + "".join(f"{v:12.3f}" for v in frac[i]) + acc.rjust(10))
        return "\n".join(lines)


def metrics_report(preds, labels) -> MetricsReport:
    preds, labels = _pair(preds, labels)
    return MetricsReport(accuracy(preds, labels), balanced_accuracy(preds, labels),
                         per_class_accuracy(preds, labels), confusion(preds, labels), len(labels))


def per_patient_metrics(patient_ids, preds, labels, fma_scores=None) -> list:
    """One dict per patient with window count, accuracy and balanced accuracy."""
    preds, labels = _pair(preds, labels)
    pids = np.asarray(patient_ids, dtype=object)
    rows = []
    for pid in sorted(set(pids.tolist())):
        m = pids == pid
        row = {"patient_id": pid, "n_windows": int(m.sum()),
               "accuracy": accuracy(preds[m], labels[m]),
               "balanced_accuracy": balanced_accuracy(preds[m], labels[m])}
        if fma_scores is not None:
            row["fma_score"] = fma_scores.get(pid)
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else repr(float(v))
    return str(v)


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_confusion_csv(path, counts) -> None:
    counts = np.asarray(counts)
    frac = normalize_rows(counts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true_label", "predicted_label", "count", "fraction"])
        for i, t in enumerate(PRIMITIVE_NAMES):
            for j, p in enumerate(PRIMITIVE_NAMES):
                w.writerow([t, p, int(counts[i, j]), _fmt(frac[i, j])])


def write_letter_values_csv(path, summary: LetterValueSummary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true_label", "scored_label", "n"] + [f"q{lv}" for lv in summary.levels])
        for t, s, n, q in summary.rows():
            w.writerow([t, s, n] + [_fmt(v) for v in q])


def write_composition_csv(path, comp: WindowComposition) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low_pct", "bin_high_pct", "correct_truth", "incorrect_truth", "incorrect_predicted"])
        for k in range(N_BINS):
            w.writerow([10 * k, 10 * (k + 1), int(comp.correct_truth[k]), int(comp.incorrect_truth[k]),
                        int(comp.incorrect_predicted[k])])


def write_per_patient_csv(path, rows) -> None:
    cols = ["patient_id", "n_windows", "accuracy", "balanced_accuracy", "fma_score"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
