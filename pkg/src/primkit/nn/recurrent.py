"""Single-layer LSTM with full backprop-through-time."""

import numpy as np

from ..errors import ConfigError
from . import functional as F
from .layers import DEFAULT_DTYPE, Layer, glorot_uniform


class LSTM(Layer):
    """Consumes ``B x C x T`` windows, emits the final hidden state ``B x H``.

    Weights use the fused-gate layout ``4H x (C + H)`` with gate order
    (input, forget, candidate, output). The forget-gate bias starts at 1.
    Set ``return_sequences`` to get the full ``B x H x T`` hidden sequence.
    """

    kind = "lstm"

    def __init__(self, input_size, hidden_size, rng=None, dtype=DEFAULT_DTYPE, return_sequences=False):
        super().__init__()
        if hidden_size <= 0 or input_size <= 0:
            raise ConfigError(f"lstm sizes must be positive, got input={input_size} hidden={hidden_size}")
        rng = rng if rng is not None else np.random.default_rng(0)
        H = hidden_size
        self.hidden_size = H
        self.input_size = input_size
        self.return_sequences = return_sequences
        self._add_param("weight", glorot_uniform(rng, (4 * H, input_size + H), input_size + H, 4 * H, dtype))
        bias = np.zeros(4 * H, dtype)
        bias[H:2 * H] = 1.0
        self._add_param("bias", bias)
        self._cache = None
        self.last_state = None

    def forward(self, x, h0=None, c0=None):
        hidden, self.last_state, self._cache = F.lstm_forward(x, self.params["weight"], self.params["bias"], h0, c0)
        self.steps = x.shape[2]
        return hidden if self.return_sequences else self.last_state[0]

    def backward(self, grad):
        if self.return_sequences:
            dx, dw, db, self.d_h0, self.d_c0 = F.lstm_backward(self._cache, d_hidden=grad)
        else:
            dx, dw, db, self.d_h0, self.d_c0 = F.lstm_backward(self._cache, d_last_h=grad)
        self.grads["weight"][...] = dw
        self.grads["bias"][...] = db
        return dx

    def __repr__(self):
        return f"LSTM({self.input_size}->{self.hidden_size})"
