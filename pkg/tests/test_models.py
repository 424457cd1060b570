import json
from dataclasses import replace

import numpy as np
import pytest

from primkit.errors import ConfigError, ModeError
from primkit.models import (
    EmbeddingModuleConfig,
    ModelSpec,
    NeuralClassifier,
    _resnet_block,
    build_cnn,
    build_embedding_front,
    build_fcnn,
    build_lstm,
    build_model,
    count_parameters,
    desk_spec,
    matched_width_spec,
    model_predict_proba,
    stage_allocation,
)
from primkit.nn import DenseConcat, gradient_check


def rng(seed=0):
    return np.random.default_rng(seed)


def tiny_cnn(style="resnet", norm="instance", emb=True, C=3, **kw):
    return ModelSpec(family="cnn", cnn_style=style, norm=norm, input_embedding=emb, n_channels=C, depth=8,
                     base_width=4, growth_rate=3, window_length=16,
                     embedding=EmbeddingModuleConfig(blocks_per_channel=2, growth=2, embedding_dim=2), **kw)


class TestFCNN:
    def test_param_count_69(self):
        spec = ModelSpec(family="fcnn", n_channels=2, fcnn_depth=1, fcnn_width=4, input_embedding=False)
        assert build_fcnn(spec, rng()).n_parameters() == 69

    def test_selected_shapes(self):
        spec = ModelSpec(family="fcnn", n_channels=78, input_embedding=False)
        shapes = build_fcnn(spec, rng()).parameter_shapes()
        assert shapes["dense0.weight"] == (900, 390)
        assert [shapes[f"dense{i}.weight"] for i in range(1, 8)] == [(900, 900)] * 7
        assert shapes["head.weight"] == (5, 900)
        assert "dense8.weight" not in shapes

    def test_forward_shape(self):
        spec = ModelSpec(family="fcnn", n_channels=2, fcnn_depth=2, fcnn_width=8, input_embedding=False)
        g = build_fcnn(spec, rng()).eval()
        assert g.forward(np.zeros((3, 10), np.float32)).shape == (3, 5)

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            build_fcnn(ModelSpec(family="fcnn", fcnn_width=0, input_embedding=False), rng())


class TestLSTM:
    def test_gate_layout(self):
        g = build_lstm(ModelSpec(family="lstm", n_channels=78, hidden_size=8, input_embedding=False), rng())
        assert g.parameter_shapes()["lstm.weight"] == (32, 86)

    def test_zero_network_logits_equal_bias(self):
        g = build_lstm(ModelSpec(family="lstm", n_channels=4, hidden_size=5, input_embedding=False), rng())
        for _, p, _ in g.named_parameters():
            p[...] = 0
        g.layers[1].params["bias"][...] = [1, 2, 3, 4, 5]
        out = g.eval().forward(rng().normal(size=(2, 4, 200)).astype(np.float32))
        np.testing.assert_array_equal(out, [[1, 2, 3, 4, 5]] * 2)
        assert g.layers[0].steps == 200

    def test_bad_hidden(self):
        with pytest.raises(ConfigError):
            build_lstm(ModelSpec(family="lstm", hidden_size=0, input_embedding=False), rng())


class TestCNN:
    @pytest.mark.parametrize("style", ["resnet", "densenet"])
    @pytest.mark.parametrize("emb", [True, False])
    def test_default_depth_44(self, style, emb):
        assert build_cnn(ModelSpec(cnn_style=style, input_embedding=emb, n_channels=6), rng()).depth() == 44

    def test_allocation(self):
        assert stage_allocation(ModelSpec(cnn_style="resnet")) == [7, 7, 7]
        assert stage_allocation(ModelSpec(cnn_style="densenet")) == [14, 13, 13]
        assert stage_allocation(ModelSpec(cnn_style="resnet", depth=8)) == [1, 1, 1]

    @pytest.mark.parametrize("name", ["cnn-resnet", "cnn-densenet"])
    def test_desk_forward(self, name):
        g = build_model(desk_spec(name, 78), rng())
        g.train()
        x = rng().normal(size=(2, 78, 200)).astype(np.float32)
        assert g.forward(x).shape == (2, 5)
        assert g.depth() == 8

    def test_zero_conv_residual_is_relu_of_shortcut(self):
        spec = tiny_cnn()
        block = _resnet_block(4, 4, 1, spec, rng())
        for m in block.modules():
            if "weight" in m.params and m.params["weight"].ndim == 3:
                m.params["weight"][...] = 0
        x = rng().normal(size=(2, 4, 16)).astype(np.float32)
        np.testing.assert_allclose(block.forward(x), np.maximum(x, 0), atol=1e-6)

    def test_odd_resnet_depth_rejected(self):
        with pytest.raises(ConfigError):
            build_cnn(replace(tiny_cnn(), depth=9), rng())

    def test_collapse_rejected(self):
        with pytest.raises(ConfigError):
            build_cnn(replace(tiny_cnn(), window_length=3, n_stages=3), rng())

    def test_norm_swap_keeps_parameter_shapes(self):
        a = build_cnn(tiny_cnn(norm="batch"), rng()).parameter_shapes()
        b = build_cnn(tiny_cnn(norm="instance"), rng()).parameter_shapes()
        assert a == b
        assert len(dict(build_cnn(tiny_cnn(norm="instance"), rng()).named_buffers())) == 0

    def test_dense_block_bookkeeping(self):
        g = build_cnn(tiny_cnn(style="densenet", emb=False), rng())
        blocks = [m for m in g.modules() if isinstance(m, DenseConcat)]
        x = rng().normal(size=(2, 5, 16)).astype(np.float32)
        for b in blocks:
            if b.body.layers[0].channels == 5:
                assert b.forward(x).shape[1] == 5 + 3


class TestEmbedding:
    def test_stem_input_312(self):
        spec = desk_spec("cnn-resnet", 78)
        front = build_embedding_front(spec, rng())
        out = front.forward(rng().normal(size=(2, 78, 200)).astype(np.float32))
        assert out.shape == (2, 312, 200)
        assert build_cnn(spec, rng()).parameter_shapes()["stem.weight"][1] == 312

    def test_non_cnn_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(family="lstm", input_embedding=True)

    def test_identity_configuration(self):
        spec = replace(tiny_cnn(), embedding=EmbeddingModuleConfig(blocks_per_channel=0, embedding_dim=1,
                                                                   input_norm=False))
        front = build_embedding_front(spec, rng())
        proj = front.layers[-1]
        proj.params["weight"][...] = 1
        proj.params["bias"][...] = 0
        x = rng().normal(size=(2, 3, 16)).astype(np.float32)
        np.testing.assert_array_equal(front.forward(x), x)

    def test_unshared_weights_get_different_gradients(self):
        spec = tiny_cnn(C=2)
        g = build_cnn(spec, rng(3))
        sig = rng().normal(size=(4, 1, 16)).astype(np.float32)
        x = np.concatenate([sig, sig], axis=1)
        g.train()
        g.loss_and_grad(x, np.array([0, 1, 2, 3]))
        first = next(m for m in g.layers[0].modules() if isinstance(m, DenseConcat))
        dw = first.body.layers[0].grads["weight"]  # 2 groups x growth 2 rows
        assert not np.allclose(dw[:2], dw[2:])

    def test_instance_norm_absorbs_channel_scale(self):
        spec = tiny_cnn(C=4)
        front = build_embedding_front(spec, rng(1))
        body = next(m for m in front.modules() if isinstance(m, DenseConcat)).body
        conv, norm = body.layers[0], body.layers[1]
        x = rng(2).normal(size=(3, 4, 16)).astype(np.float64)
        conv.astype(np.float64)
        norm.astype(np.float64)
        ref = norm.forward(conv.forward(x))
        for ch in range(4):
            for alpha in (2.0, 3.0, 10.0, 100.0):
                xs = x.copy()
                xs[1, ch] *= alpha
                np.testing.assert_allclose(norm.forward(conv.forward(xs)), ref, atol=1e-4)


    def test_instance_norm_front_absorbs_channel_affine(self):
        front = build_embedding_front(tiny_cnn(C=4), rng(1)).astype(np.float64).eval()
        x = rng(2).normal(size=(3, 4, 16))
        scale = np.array([0.5, 2.0, 1.3, 0.7])[None, :, None]
        offset = np.array([1.0, -1.0, 0.3, 0.0])[None, :, None]
        np.testing.assert_allclose(front.forward(x * scale + offset), front.forward(x), atol=1e-4)

    def test_batch_norm_front_is_not_affine_invariant(self):
        front = build_embedding_front(tiny_cnn(C=4, norm="batch"), rng(1)).astype(np.float64)
        x = rng(2).normal(size=(3, 4, 16))
        front.train().forward(x)
        front.eval()
        assert not np.allclose(front.forward(2 * x + 1), front.forward(x), atol=1e-2)


class TestGradients:
    @pytest.mark.parametrize("spec", [
        ModelSpec(family="fcnn", n_channels=2, fcnn_depth=2, fcnn_width=6, dropout=0.3, input_embedding=False),
        ModelSpec(family="lstm", n_channels=3, hidden_size=4, input_embedding=False),
        tiny_cnn("resnet", "instance", True),
        tiny_cnn("resnet", "batch", False),
        tiny_cnn("densenet", "instance", True),
        tiny_cnn("densenet", "batch", True),
    ], ids=["fcnn", "lstm", "resnet-in-emb", "resnet-bn", "densenet-in-emb", "densenet-bn-emb"])
    def test_gradient_check(self, spec):
        g = build_model(spec, rng(4))
        r = rng(5)
        x = r.normal(size=(3, 10)) if spec.family == "fcnn" else r.normal(size=(3, spec.n_channels, 16))
        report = gradient_check(g, x, labels=np.array([0, 3, 4]), max_entries=12, seed=1)
        assert report.passed, report.failures


class TestPredict:
    def test_train_mode_rejected(self):
        g = build_model(tiny_cnn(), rng())
        with pytest.raises(ModeError):
            model_predict_proba(g.train(), np.zeros((1, 3, 16), np.float32))

    def test_uniform_logits(self):
        g = build_fcnn(ModelSpec(family="fcnn", n_channels=2, fcnn_depth=1, fcnn_width=3, input_embedding=False),
                       rng())
        g.layers[-1].params["weight"][...] = 0
        np.testing.assert_allclose(model_predict_proba(g.eval(), np.ones((2, 10))), 0.2)

    def test_simplex_and_argmax(self):
        g = build_model(tiny_cnn(), rng()).eval()
        x = rng().normal(size=(6, 3, 16)).astype(np.float32)
        p = model_predict_proba(g, x)
        np.testing.assert_allclose(p.sum(1), 1, atol=1e-6)
        np.testing.assert_array_equal(np.argmax(p, 1), np.argmax(g.forward(x), 1))


class TestSpec:
    def test_json_roundtrip(self):
        spec = desk_spec("cnn-densenet", 14)
        again = ModelSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec

    def test_version_checked(self):
        d = desk_spec("lstm", 4).to_dict()
        d["spec_version"] = 99
        with pytest.raises(ConfigError):
            ModelSpec.from_dict(d)

    def test_matched_width(self):
        emb = desk_spec("cnn-resnet", 14)
        target = count_parameters(emb)
        plain = matched_width_spec(replace(emb, input_embedding=False), target)
        n = count_parameters(plain)
        for w in (plain.base_width - 1, plain.base_width + 1):
            assert abs(count_parameters(replace(plain, base_width=w)) - target) >= abs(n - target)

    def test_classifier_predict_windows(self):
        from primkit.data import Recording, compact_schema, extract_windows

        r = rng()
        rec = Recording("p", "a", 0, r.normal(size=(240, 3)), r.integers(0, 5, 240), compact_schema(3, False))
        ws = extract_windows(rec, 0.16, stride_samples=5)
        for spec in (tiny_cnn(), ModelSpec(family="fcnn", n_channels=3, fcnn_depth=1, fcnn_width=4,
                                           input_embedding=False)):
            clf = NeuralClassifier.build(spec, r)
            clf.graph.eval()
            p = clf.predict_windows(ws, batch_size=7)
            assert p.shape == (len(ws), 5)
            np.testing.assert_allclose(p[:7], clf.predict_proba(clf.inputs_for(ws, np.arange(7))))
