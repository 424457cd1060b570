"""A layer stack paired with the softmax cross-entropy head."""

import numpy as np

from . import functional as F
from .layers import Dropout, Sequential


class SoftmaxCrossEntropy:
    kind = "softmax_xent_head"

    def forward(self, logits, labels):
        self.loss, self.probs, self._grad = F.softmax_cross_entropy(logits, labels)
        return self.loss, self.probs

    def backward(self):
        return self._grad


class LayerGraph(Sequential):
    """Sequential body producing logits, plus a loss head."""

    kind = "graph"

    def __init__(self, *layers, names=None):
        super().__init__(*layers, names=names)
        self.head = SoftmaxCrossEntropy()

    @classmethod
    def wrap(cls, body: Sequential):
        return cls(*body.layers, names=body.names)

    def loss_and_grad(self, x, labels):
        """Forward, loss, and full backward pass; returns ``(loss, probs)``."""
        logits = self.forward(x)
        loss, probs = self.head.forward(logits, labels)
        self.backward(self.head.backward())
        return loss, probs

    def loss(self, x, labels):
        return self.head.forward(self.forward(x), labels)[0]

    def predict_logits(self, x):
        return self.forward(x)

    def set_dropout_rng(self, rng):
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng

    def depth(self) -> int:
        """Number of conv/dense layers that count toward network depth."""
        return sum(1 for m in self.modules() if m.counts_toward_depth)

    def parameter_shapes(self):
        return {name: p.shape for name, p, _ in self.named_parameters()}

    def state_arrays(self):
        """All parameters and buffers by name, in a stable order."""
        out = {name: p for name, p, _ in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_arrays(self, arrays):
        params = {name: p for name, p, _ in self.named_parameters()}
        buffers = dict(self.named_buffers())
        for name, value in arrays.items():
            target = params.get(name)
            if target is None:
                target = buffers[name]
            target[...] = np.asarray(value, dtype=target.dtype).reshape(target.shape)
