"""Model families built from a JSON-serializable :class:`ModelSpec`.

Depth convention: convolutional and dense layers on the main path count
toward ``depth``. Normalization, activation and pooling layers do not,
and neither do the 1x1 shortcut projections of residual stages or the
per-channel embedding modules in front of the CNN.

ResNet style: ``depth = stem + 2 * n_blocks + head``.
DenseNet style: ``depth = stem + n_dense_layers + (n_stages - 1) transitions + head``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ModeError
from .features import compute_features
from .nn import (
    LSTM,
    Conv1d,
    Dense,
    DenseConcat,
    Dropout,
    GlobalAvgPool,
    LayerGraph,
    ReLU,
    Residual,
    Sequential,
    make_norm,
    softmax,
)
from .nn.functional import conv_output_length, same_padding
from .primitives import N_PRIMITIVES

SPEC_VERSION = 1
FAMILIES = ("fcnn", "lstm", "cnn")
CNN_STYLES = ("resnet", "densenet")
NORMS = ("batch", "instance")


@dataclass
class EmbeddingModuleConfig:
    blocks_per_channel: int = 2
    growth: int = 4
    kernel_size: int = 3
    embedding_dim: int = 4
    input_norm: bool = True


@dataclass
class ModelSpec:
    """Architecture description. Only the fields of ``family`` are used."""

    family: str = "cnn"
    n_channels: int = 78
    window_length: int = 200
    n_labels: int = N_PRIMITIVES
    # fcnn
    fcnn_depth: int = 8
    fcnn_width: int = 900
    dropout: float = 0.5
    # lstm
    hidden_size: int = 4000
    # cnn
    cnn_style: str = "resnet"
    norm: str = "instance"
    input_embedding: bool = True
    depth: int = 44
    base_width: int = 32
    n_stages: int = 3
    kernel_size: int = 3
    growth_rate: int = 12
    embedding: EmbeddingModuleConfig = field(default_factory=EmbeddingModuleConfig)

    def __post_init__(self):
        if isinstance(self.embedding, dict):
            self.embedding = EmbeddingModuleConfig(**self.embedding)
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "cnn":
            if self.cnn_style not in CNN_STYLES:
                raise ConfigError(f"unknown cnn_style {self.cnn_style!r}")
            if self.norm not in NORMS:
                raise ConfigError(f"unknown norm {self.norm!r}")
        elif self.input_embedding:
            raise ConfigError(f"input embeddings are only defined for the cnn family, not {self.family!r}")

    @property
    def n_features(self) -> int:
        return 5 * self.n_channels

    @property
    def input_kind(self) -> str:
        return "features" if self.family == "fcnn" else "windows"

    def to_dict(self) -> dict:
        return {"spec_version": SPEC_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        d = dict(d)
        version = d.pop("spec_version", SPEC_VERSION)
        if version != SPEC_VERSION:
            raise ConfigError(f"model spec version {version} is not supported (expected {SPEC_VERSION})")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed model spec: {exc}") from None


def desk_spec(family: str, n_channels: int, **overrides) -> ModelSpec:
    """Laptop-scale presets for every family."""
    presets = {
        "fcnn": dict(fcnn_depth=2, fcnn_width=128, dropout=0.2, input_embedding=False),
        "lstm": dict(hidden_size=32, input_embedding=False),
        "cnn": dict(depth=8, base_width=16, growth_rate=8, cnn_style="resnet", norm="instance",
                    input_embedding=True),
        "cnn-resnet": dict(family="cnn", depth=8, base_width=16, cnn_style="resnet"),
        "cnn-densenet": dict(family="cnn", depth=8, base_width=16, growth_rate=8, cnn_style="densenet"),
    }
    if family not in presets:
        raise ConfigError(f"no desk preset for {family!r}")
    kw = {"family": family if family in FAMILIES else "cnn", "n_channels": n_channels}
    kw.update(presets[family])
    kw.update(overrides)
    return ModelSpec(**kw)


def _no_depth(layer):
    layer.counts_toward_depth = False
    return layer


def build_fcnn(spec: ModelSpec, rng) -> LayerGraph:
    if spec.fcnn_depth <= 0 or spec.fcnn_width <= 0:
        raise ConfigError(f"fcnn depth and width must be positive, got {spec.fcnn_depth}, {spec.fcnn_width}")
    layers, names, fan_in = [], [], spec.n_features
    for i in range(spec.fcnn_depth):
        layers += [Dense(fan_in, spec.fcnn_width, rng), ReLU(), Dropout(spec.dropout)]
        names += [f"dense{i}", f"relu{i}", f"drop{i}"]
        fan_in = spec.fcnn_width
    layers.append(Dense(fan_in, spec.n_labels, rng))
    names.append("head")
    return LayerGraph(*layers, names=names)


def build_lstm(spec: ModelSpec, rng) -> LayerGraph:
    if spec.hidden_size <= 0:
        raise ConfigError(f"lstm hidden size must be positive, got {spec.hidden_size}")
    return LayerGraph(LSTM(spec.n_channels, spec.hidden_size, rng), Dense(spec.hidden_size, spec.n_labels, rng),
                      names=["lstm", "head"])


def build_embedding_front(spec: ModelSpec, rng) -> Sequential:
    """One unshared module per input channel, realised as grouped convolutions.

    With ``input_norm`` each raw channel first passes through its own
    normalization layer of kind ``spec.norm``. Each module then stacks
    ``blocks_per_channel`` DenseNet-style blocks (conv, norm, relu,
    concatenated with the block input) on its 1-channel input, and projects
    linearly (kernel 1) to ``embedding_dim`` channels. Output channel
    ``i * embedding_dim + j`` is feature ``j`` of channel ``i``.

    With instance norm and ``input_norm`` the whole front is invariant to
    any positive per-channel affine map of its input (up to the norm
    epsilon), since every later layer only sees the normalized channel.
    """
    if spec.family != "cnn":
        raise ConfigError("input embeddings are only defined for the cnn family")
    e = spec.embedding
    if min(e.growth, e.kernel_size, e.embedding_dim) <= 0 or e.blocks_per_channel < 0:
        raise ConfigError(f"invalid embedding config {e}")
    C = spec.n_channels
    front = Sequential()
    if e.input_norm:
        front.append(make_norm(spec.norm, C), "input_norm")
    width = 1
    for b in range(e.blocks_per_channel):
        body = Sequential(
            _no_depth(Conv1d(C * width, C * e.growth, e.kernel_size, groups=C, bias=False, rng=rng)),
            make_norm(spec.norm, C * e.growth),
            ReLU(),
            names=["conv", "norm", "relu"],
        )
        front.append(DenseConcat(body, groups=C), f"block{b}")
        width += e.growth
    front.append(_no_depth(Conv1d(C * width, C * e.embedding_dim, 1, groups=C, rng=rng)), "project")
    return front


def _resnet_block(cin, cout, stride, spec, rng):
    k = spec.kernel_size
    body = Sequential(
        Conv1d(cin, cout, k, stride=stride, bias=False, rng=rng), make_norm(spec.norm, cout), ReLU(),
        Conv1d(cout, cout, k, bias=False, rng=rng), make_norm(spec.norm, cout),
        names=["conv1", "norm1", "relu1", "conv2", "norm2"],
    )
    shortcut = None
    if stride != 1 or cin != cout:
        shortcut = Sequential(_no_depth(Conv1d(cin, cout, 1, stride=stride, bias=False, rng=rng)),
                              make_norm(spec.norm, cout), names=["conv", "norm"])
    return Sequential(Residual(body, shortcut), ReLU(), names=["residual", "relu"])


def split_evenly(total: int, parts: int) -> list:
    """``total`` items over ``parts`` stages, remainder to the earliest stages."""
    return [total // parts + (1 if i < total % parts else 0) for i in range(parts)]


def stage_allocation(spec: ModelSpec) -> list:
    """Blocks (resnet) or dense layers (densenet) per stage for ``spec.depth``."""
    S = spec.n_stages
    if S < 1:
        raise ConfigError("a cnn needs at least one stage")
    if spec.cnn_style == "resnet":
        if (spec.depth - 2) % 2:
            raise ConfigError(f"resnet depth {spec.depth} must be even (stem + 2 per block + head)")
        n = (spec.depth - 2) // 2
    else:
        n = spec.depth - 2 - (S - 1)
    if n < S:
        raise ConfigError(f"depth {spec.depth} too small for {S} {spec.cnn_style} stages")
    return split_evenly(n, S)


def _check_length(spec: ModelSpec, cin_after_front: int):
    T = spec.window_length
    pad = same_padding(spec.kernel_size)
    for _ in range(spec.n_stages - 1):
        T = conv_output_length(T, spec.kernel_size, 2, pad)
    min_len = 2 if spec.norm == "instance" else 1
    if T < min_len:
        raise ConfigError(f"window of {spec.window_length} samples collapses to {T} after {spec.n_stages} stages")


def build_cnn(spec: ModelSpec, rng) -> LayerGraph:
    """Stem, ``n_stages`` stages (stride-2 between stages), global pooling, dense head."""
    if spec.base_width <= 0 or spec.kernel_size <= 0:
        raise ConfigError("cnn widths and kernel size must be positive")
    alloc = stage_allocation(spec)
    layers, names = [], []
    cin = spec.n_channels
    if spec.input_embedding:
        layers.append(build_embedding_front(spec, rng))
        names.append("embed")
        cin = spec.n_channels * spec.embedding.embedding_dim
    _check_length(spec, cin)
    w = spec.base_width
    layers += [Conv1d(cin, w, spec.kernel_size, bias=False, rng=rng), make_norm(spec.norm, w), ReLU()]
    names += ["stem", "stem_norm", "stem_relu"]
    c = w
    if spec.cnn_style == "resnet":
        for s, n_blocks in enumerate(alloc):
            cout = w * 2 ** s
            for b in range(n_blocks):
                stride = 2 if (s > 0 and b == 0) else 1
                layers.append(_resnet_block(c, cout, stride, spec, rng))
                names.append(f"stage{s}_block{b}")
                c = cout
    else:
        g = spec.growth_rate
        for s, n_layers in enumerate(alloc):
            if s > 0:
                cout = max(1, c // 2)
                layers.append(Sequential(make_norm(spec.norm, c), ReLU(),
                                         Conv1d(c, cout, spec.kernel_size, stride=2, bias=False, rng=rng),
                                         names=["norm", "relu", "conv"]))
                names.append(f"transition{s}")
                c = cout
            for j in range(n_layers):
                body = Sequential(make_norm(spec.norm, c), ReLU(),
                                  Conv1d(c, g, spec.kernel_size, bias=False, rng=rng), names=["norm", "relu", "conv"])
                layers.append(DenseConcat(body))
                names.append(f"stage{s}_dense{j}")
                c += g
        layers += [make_norm(spec.norm, c), ReLU()]
        names += ["final_norm", "final_relu"]
    layers += [GlobalAvgPool(), Dense(c, spec.n_labels, rng)]
    names += ["pool", "head"]
    return LayerGraph(*layers, names=names)


def build_model(spec: ModelSpec, rng) -> LayerGraph:
    builders = {"fcnn": build_fcnn, "lstm": build_lstm, "cnn": build_cnn}
    return builders[spec.family](spec, rng)


def count_parameters(spec: ModelSpec) -> int:
    return build_model(spec, np.random.default_rng(0)).n_parameters()


def matched_width_spec(spec: ModelSpec, target_params: int, max_width: int = 512) -> ModelSpec:
    """Copy of ``spec`` whose width (``base_width``/``growth_rate``) gives the
    parameter count closest to ``target_params``; ties go to the smaller width."""
    field_name = "base_width" if spec.cnn_style == "resnet" else "growth_rate"
    lo, hi = 1, max_width

    def count(w):
        return count_parameters(replace(spec, **{field_name: w}))

    while lo < hi:  # parameter count is increasing in width
        mid = (lo + hi) // 2
        if count(mid) < target_params:
            lo = mid + 1
        else:
            hi = mid
    best = min({max(1, lo - 1), lo}, key=lambda w: (abs(count(w) - target_params), w))
    return replace(spec, **{field_name: best})


class NeuralClassifier:
    """A built network together with its spec and input contract."""

    family = "neural"

    def __init__(self, spec: ModelSpec, graph: LayerGraph, feature_hash: str | None = None,
                 channel_names=None, metadata=None):
        self.spec = spec
        self.graph = graph
        self.feature_hash = feature_hash
        self.channel_names = list(channel_names) if channel_names is not None else None
        self.metadata = dict(metadata or {})

    @classmethod
    def build(cls, spec: ModelSpec, rng, feature_hash=None, channel_names=None):
        return cls(spec, build_model(spec, rng), feature_hash, channel_names)

    def inputs_for(self, windows, idx=None) -> np.ndarray:
        """Model inputs for windows ``idx`` of a WindowSet."""
        batch = windows.batch(idx)
        if self.spec.input_kind == "features":
            return compute_features(batch).astype(np.float32)
        return batch

    def predict_proba(self, x) -> np.ndarray:
        return model_predict_proba(self.graph, x)

    def predict_windows(self, windows, batch_size: int = 256) -> np.ndarray:
        out = np.empty((len(windows), self.spec.n_labels), dtype=np.float64)
        for s in range(0, len(windows), batch_size):
            idx = np.arange(s, min(len(windows), s + batch_size))
            out[idx] = self.predict_proba(self.inputs_for(windows, idx))
        return out


def model_predict_proba(graph: LayerGraph, x) -> np.ndarray:
    """Softmax probabilities; the graph must be in eval mode."""
    if graph.training:
        raise ModeError("predict_proba called on a model in train mode; call .eval() first")
    return softmax(graph.forward(x).astype(np.float64))
