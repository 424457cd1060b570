"""Adam, the step learning-rate schedule, and the early-stopping training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .evaluation import accuracy, balanced_accuracy
from .rng import derive_rng

log = logging.getLogger(__name__)

LR0 = 1.25e-4
BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_HALVING = {"fcnn": 20, "cnn": 20, "lstm": 10}


@dataclass
class AdamState:
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    lr0: float = LR0
    lr_halving_period: int | None = None
    patience: int = 10
    seed: int = 0
    clip_norm: float | None = None
    val_metric: str = "accuracy"
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.val_metric not in ("accuracy", "balanced_accuracy"):
            raise ConfigError(f"unknown val_metric {self.val_metric!r}")

    def period_for(self, family: str) -> int:
        return self.lr_halving_period or DEFAULT_HALVING.get(family, 20)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(epoch: int, lr0: float = LR0, period: int = 20) -> float:
    """``lr0`` halved once every ``period`` epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return lr0 / 2 ** (epoch // period)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainResult:
    best_epoch: int
    best_val_score: float
    epochs_run: int
    stopped_early: bool
    history: list

    def to_dict(self) -> dict:
        return asdict(self)


class _Inputs:
    """Caches model inputs when they are cheap to hold (feature vectors)."""

    def __init__(self, model, windows):
        self.model = model
        self.windows = windows
        self.cached = model.inputs_for(windows) if model.spec.input_kind == "features" else None

    def get(self, idx):
        if self.cached is not None:
            return self.cached[idx]
        return self.model.inputs_for(self.windows, idx)


def _score(model, inputs: _Inputs, labels, metric, batch_size):
    graph = model.graph
    graph.eval()
    preds = np.empty(len(labels), dtype=np.int64)
    for s in range(0, len(labels), batch_size):
        idx = np.arange(s, min(len(labels), s + batch_size))
        preds[idx] = np.argmax(graph.forward(inputs.get(idx)), axis=1)
    graph.train()
    return (accuracy if metric == "accuracy" else balanced_accuracy)(preds, labels)


def fit(model, train_windows, val_windows, config: TrainConfig, callback=None, stream=()) -> TrainResult:
    """Train ``model`` (a NeuralClassifier) with early stopping on the validation score.

    Each epoch shuffles the training windows, takes Adam steps on
    minibatches, then scores the validation set. The parameters and
    buffers of the best epoch (strict improvement) are restored before
    returning. Training stops after ``max(patience, 1)`` consecutive
    epochs without improvement. ``stream`` extends the keys of the shuffle
    and dropout random streams, so that folds sharing one seed still draw
    different minibatch orders.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ConfigError("training and validation sets must both be non-empty")
    graph = model.graph
    graph.train()
    graph.set_dropout_rng(derive_rng(config.seed, "dropout", *stream))
    shuffle_rng = derive_rng(config.seed, "shuffle", *stream)
    period = config.period_for(model.spec.family)
    params = {name: p for name, p, _ in graph.named_parameters()}
    grads = {name: g for name, _, g in graph.named_parameters()}
    state = AdamState()
    train_in, val_in = _Inputs(model, train_windows), _Inputs(model, val_windows)
    y_train, y_val = train_windows.labels, val_windows.labels
    n = len(y_train)

    best_score, best_epoch, best_state, wait = -math.inf, -1, None, 0
    history, stopped = [], False
    for epoch in range(config.max_epochs):
        lr = lr_at(epoch, config.lr0, period)
        order = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = np.sort(order[s:s + config.batch_size])
            loss, probs = graph.loss_and_grad(train_in.get(idx), y_train[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, state, lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y_train[idx]))
        score = _score(model, val_in, y_val, config.val_metric, config.eval_batch_size)
        record = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / n, "train_accuracy": correct / n,
                  "val_score": score}
        history.append(record)
        log.info("epoch %d lr %.3g loss %.4f train acc %.4f val %.4f", epoch, lr, record["train_loss"],
                 record["train_accuracy"], score)
        if callback is not None:
            callback(record)
        if score > best_score:
            best_score, best_epoch, wait = score, epoch, 0
            best_state = {k: v.copy() for k, v in graph.state_arrays().items()}
        else:
            wait += 1
            if wait >= max(config.patience, 1):
                stopped = True
                break
    graph.load_state_arrays(best_state)
    graph.eval()
    model.metadata.update({"best_epoch": best_epoch, "val_score": best_score, "seed": config.seed})
    return TrainResult(best_epoch, best_score, len(history), stopped, history)
