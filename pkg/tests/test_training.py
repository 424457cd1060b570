import json
import math

import numpy as np
import pytest

from helpers import toy_windows
from primkit.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from primkit.errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    FamilyMismatchError,
    IncompatibleFeaturesError,
    NumericError,
)
from primkit.features import compute_features
from primkit.forest import ForestConfig, fit_forest
from primkit.models import EmbeddingModuleConfig, ModelSpec, NeuralClassifier
from primkit.rng import derive_rng
from primkit.training import AdamState, TrainConfig, adam_step, clip_gradients, fit, lr_at


def reference_adam(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on one scalar in plain Python floats."""
    x, m, v, out = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(x)
    return out


def small_cnn(C=3, norm="instance", emb=True):
    return ModelSpec(family="cnn", n_channels=C, window_length=16, depth=8, base_width=4, norm=norm,
                     input_embedding=emb, embedding=EmbeddingModuleConfig(2, 2, 3, 2))


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        state = AdamState()
        for _ in range(10):
            adam_step(p, {"w": np.zeros(3)}, state, 0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])

    def test_first_step_is_lr(self):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([0.5])}, AdamState(), 1.25e-4)
        assert p["w"][0] == pytest.approx(-1.25e-4, rel=1e-7)

    def test_reference_trajectory(self):
        p = {"x": np.array([1.0])}
        g = {"x": np.zeros(1)}
        state = AdamState()
        ref = reference_adam(1.0, lambda x: 2 * x, 0.01, 100)
        for k in range(100):
            g["x"][...] = 2 * p["x"]
            adam_step(p, g, state, 0.01)
            assert abs(p["x"][0] - ref[k]) < 1e-10
        assert all(np.all(v >= 0) for v in state.v.values())

    def test_nan_names_parameter(self):
        with pytest.raises(NumericError, match="conv.weight"):
            adam_step({"conv.weight": np.zeros(2)}, {"conv.weight": np.array([0.0, np.nan])}, AdamState(), 0.1)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_gradients(g, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


class TestSchedule:
    @pytest.mark.parametrize("epoch,factor", [(0, 1), (19, 1), (20, 0.5), (45, 0.25)])
    def test_examples(self, epoch, factor):
        assert lr_at(epoch, 1.25e-4, 20) == 1.25e-4 * factor

    def test_monotone(self):
        vals = [lr_at(e, 1.0, 10) for e in range(200)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_family_periods(self):
        cfg = TrainConfig()
        assert cfg.period_for("lstm") == 10 and cfg.period_for("cnn") == 20 and cfg.period_for("fcnn") == 20

    def test_negative_epoch(self):
        with pytest.raises(ConfigError):
            lr_at(-1)


class TestFit:
    def setup_method(self):
        self.train = toy_windows(0, 3)
        self.val = toy_windows(1, 2)

    def run(self, spec, **kw):
        cfg = TrainConfig(**{"max_epochs": 6, "lr0": 3e-3, "batch_size": 32, "seed": 0, **kw})
        model = NeuralClassifier.build(spec, derive_rng(cfg.seed, "init"))
        return model, fit(model, self.train, self.val, cfg)

    def test_learns_and_restores_best(self):
        model, res = self.run(small_cnn(), max_epochs=10)
        scores = [h["val_score"] for h in res.history]
        assert res.best_val_score == max(scores)
        assert res.best_epoch == scores.index(max(scores))
        preds = np.argmax(model.predict_windows(self.val), 1)
        assert np.mean(preds == self.val.labels) == pytest.approx(res.best_val_score)
        assert res.best_val_score > 0.5

    def test_never_returns_worse_than_earlier(self):
        _, res = self.run(small_cnn(norm="batch"), max_epochs=8, patience=2)
        scores = [h["val_score"] for h in res.history]
        assert all(res.best_val_score >= s for s in scores)

    def test_patience_zero_stops_at_first_non_improvement(self):
        _, res = self.run(small_cnn(), max_epochs=30, patience=0, lr0=1e-9)
        scores = [h["val_score"] for h in res.history]
        first_bad = next(i for i in range(1, len(scores)) if scores[i] <= max(scores[:i]))
        assert res.epochs_run == first_bad + 1 and res.stopped_early

    def test_deterministic_checkpoints(self, tmp_path):
        for k in range(2):
            model, res = self.run(small_cnn(norm="batch"), max_epochs=3)
            save_checkpoint(model, tmp_path / f"run{k}")
        for name in ("manifest.json", "params.bin"):
            assert (tmp_path / "run0" / name).read_bytes() == (tmp_path / "run1" / name).read_bytes()

    def test_fcnn_and_lstm_train(self):
        fc = ModelSpec(family="fcnn", n_channels=3, fcnn_depth=2, fcnn_width=16, dropout=0.2, input_embedding=False)
        _, res = self.run(fc, max_epochs=4)
        assert res.epochs_run >= 1
        ls = ModelSpec(family="lstm", n_channels=3, hidden_size=6, input_embedding=False)
        _, res = self.run(ls, max_epochs=2, clip_norm=5.0)
        assert res.epochs_run == 2

    def test_empty_sets_rejected(self):
        model = NeuralClassifier.build(small_cnn(), np.random.default_rng(0))
        with pytest.raises(ConfigError):
            fit(model, self.train.subset([]), self.val, TrainConfig())

    def test_loss_non_increasing_first_steps(self):
        ok = 0
        x = self.train.batch(np.arange(32))
        y = self.train.labels[:32]
        for seed in range(10):
            model = NeuralClassifier.build(small_cnn(), np.random.default_rng(seed))
            g = model.graph.train()
            params = {n: p for n, p, _ in g.named_parameters()}
            grads = {n: gr for n, _, gr in g.named_parameters()}
            state, losses = AdamState(), []
            for _ in range(5):
                loss, _ = g.loss_and_grad(x, y)
                losses.append(loss)
                adam_step(params, grads, state, 1.25e-4)
            ok += all(b <= a + 1e-7 for a, b in zip(losses, losses[1:]))
        assert ok >= 6


class TestCheckpoint:
    def trained(self, norm="batch"):
        model = NeuralClassifier.build(small_cnn(norm=norm), np.random.default_rng(0), feature_hash="abc")
        fit(model, toy_windows(0, 2), toy_windows(1, 1), TrainConfig(max_epochs=2, lr0=1e-3))
        return model

    @pytest.mark.parametrize("norm", ["batch", "instance"])
    def test_roundtrip_bitwise(self, tmp_path, norm):
        model = self.trained(norm)
        x = toy_windows(2, 1).batch()
        before = model.predict_proba(x)
        save_checkpoint(model, tmp_path / "ck")
        again = load_checkpoint(tmp_path / "ck", expected_family="neural")
        assert again.predict_proba(x).tobytes() == before.tobytes()
        assert again.feature_hash == "abc" and again.spec == model.spec
        manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        has_stats = any("running_mean" in a["name"] for a in manifest["arrays"])
        assert has_stats == (norm == "batch")

    def test_forest_roundtrip(self, tmp_path):
        ws = toy_windows(0, 2)
        X = compute_features(ws)
        forest = fit_forest(X, ws.labels, ForestConfig(n_trees=4), feature_hash="h1")
        save_checkpoint(forest, tmp_path / "f")
        again = load_checkpoint(tmp_path / "f", expected_family="forest")
        assert again.predict_proba(X).tobytes() == forest.predict_proba(X).tobytes()
        with pytest.raises(FamilyMismatchError):
            load_checkpoint(tmp_path / "f", expected_family="neural")

    def test_version_tamper(self, tmp_path):
        save_checkpoint(self.trained(), tmp_path / "ck")
        m = tmp_path / "ck" / "manifest.json"
        d = json.loads(m.read_text())
        d["version"] = 7
        m.write_text(json.dumps(d))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(tmp_path / "ck")

    def test_truncated(self, tmp_path):
        save_checkpoint(self.trained(), tmp_path / "ck")
        p = tmp_path / "ck" / "params.bin"
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / "nothing")

    def test_feature_hash_mismatch(self):
        model = NeuralClassifier.build(small_cnn(), np.random.default_rng(0), feature_hash="abc")
        check_compatible(model, "abc")
        with pytest.raises(IncompatibleFeaturesError):
            check_compatible(model, "xyz")
