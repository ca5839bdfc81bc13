"""Recurrent predictors: plain RNN, LSTM and bidirectional LSTM.

All cells are implemented directly on numpy arrays with hand-derived
backpropagation through time. The readout is a single dense layer from the
final hidden state (for the bidirectional model, the Hadamard product of the
forward and backward final states) to horizon * feature outputs. Dropout, when
enabled during training, zeroes hidden units with one mask per sample held
fixed across time steps (inverted scaling), and is never active at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .base import OutputHead, Predictor, register_predictor, sigmoid
from .training import huber_value_grad

__all__ = [
    "RnnParams",
    "LstmParams",
    "lstm_cell_forward",
    "rnn_forward",
    "lstm_forward",
    "bilstm_forward",
    "RNNPredictor",
    "LSTMPredictor",
    "BiLSTMPredictor",
]


def _init(rng, *shape):
    lim = 1.0 / np.sqrt(shape[-1])
    return rng.uniform(-lim, lim, size=shape)


@dataclass
class RnnParams:
    """tanh recurrence: s_t = tanh(w_in x_t + w_rec s_{t-1} + bias)."""

    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    @property
    def hidden(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng) -> "RnnParams":
        return cls(w_in=_init(rng, hidden, input_dim),
                   w_rec=_init(rng, hidden, hidden),
                   bias=np.zeros(hidden))


@dataclass
class LstmParams:
    """Gated cell weights: w_* feed the input, v_* the previous state."""

    w_forget: np.ndarray
    w_input: np.ndarray
    w_cell: np.ndarray
    w_output: np.ndarray
    v_forget: np.ndarray
    v_input: np.ndarray
    v_cell: np.ndarray
    v_output: np.ndarray
    b_forget: np.ndarray
    b_input: np.ndarray
    b_cell: np.ndarray
    b_output: np.ndarray

    def __post_init__(self):
        n_h = self.b_forget.shape[0]
        in_dim = self.w_forget.shape[1]
        for f in fields(self):
            arr = getattr(self, f.name)
            if f.name.startswith("w_") and arr.shape != (n_h, in_dim):
                raise ValueError(f"{f.name} must have shape ({n_h}, {in_dim}), got {arr.shape}")
            if f.name.startswith("v_") and arr.shape != (n_h, n_h):
                raise ValueError(f"{f.name} must have shape ({n_h}, {n_h}), got {arr.shape}")
            if f.name.startswith("b_") and arr.shape != (n_h,):
                raise ValueError(f"{f.name} must have shape ({n_h},), got {arr.shape}")

    @property
    def hidden(self) -> int:
        return self.b_forget.shape[0]

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng) -> "LstmParams":
        return cls(
            w_forget=_init(rng, hidden, input_dim), w_input=_init(rng, hidden, input_dim),
            w_cell=_init(rng, hidden, input_dim), w_output=_init(rng, hidden, input_dim),
            v_forget=_init(rng, hidden, hidden), v_input=_init(rng, hidden, hidden),
            v_cell=_init(rng, hidden, hidden), v_output=_init(rng, hidden, hidden),
            b_forget=np.zeros(hidden), b_input=np.zeros(hidden),
            b_cell=np.zeros(hidden), b_output=np.zeros(hidden),
        )


def lstm_cell_forward(x, s_prev, c_prev, params: LstmParams):
    """One gated step; returns the new (short-term, long-term) state pair.

    Accepts single vectors or batches (leading batch axis).
    """
    x = np.asarray(x, dtype=np.float64)
    s_prev = np.asarray(s_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    f = sigmoid(x @ params.w_forget.T + s_prev @ params.v_forget.T + params.b_forget)
    i = sigmoid(x @ params.w_input.T + s_prev @ params.v_input.T + params.b_input)
    g = np.tanh(x @ params.w_cell.T + s_prev @ params.v_cell.T + params.b_cell)
    o = sigmoid(x @ params.w_output.T + s_prev @ params.v_output.T + params.b_output)
    c = f * c_prev + i * g
    s = o * np.tanh(c)
    return s, c


# --- batched chain runners with caches for backprop -------------------------

def _rnn_run(x, params: RnnParams, mask):
    batch = x.shape[0]
    s = np.zeros((batch, params.hidden))
    caches = []
    for t in range(x.shape[1]):
        xt = x[:, t]
        a = xt @ params.w_in.T + s @ params.w_rec.T + params.bias
        s_raw = np.tanh(a)
        caches.append((xt, s, s_raw))
        s = s_raw * mask if mask is not None else s_raw
    return s, caches


def _rnn_backward(ds, caches, params: RnnParams, mask):
    g = {"w_in": np.zeros_like(params.w_in),
         "w_rec": np.zeros_like(params.w_rec),
         "bias": np.zeros_like(params.bias)}
    for xt, s_prev, s_raw in reversed(caches):
        if mask is not None:
            ds = ds * mask
        da = ds * (1.0 - s_raw**2)
        g["w_in"] += da.T @ xt
        g["w_rec"] += da.T @ s_prev
        g["bias"] += da.sum(axis=0)
        ds = da @ params.w_rec
    return g


def _lstm_run(x, params: LstmParams, mask):
    batch = x.shape[0]
    s = np.zeros((batch, params.hidden))
    c = np.zeros((batch, params.hidden))
    caches = []
    for t in range(x.shape[1]):
        xt = x[:, t]
        f = sigmoid(xt @ params.w_forget.T + s @ params.v_forget.T + params.b_forget)
        i = sigmoid(xt @ params.w_input.T + s @ params.v_input.T + params.b_input)
        g = np.tanh(xt @ params.w_cell.T + s @ params.v_cell.T + params.b_cell)
        o = sigmoid(xt @ params.w_output.T + s @ params.v_output.T + params.b_output)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        s_raw = o * tc
        caches.append((xt, s, c, f, i, g, o, tc))
        c = c_new
        s = s_raw * mask if mask is not None else s_raw
    return s, caches


def _lstm_backward(ds, caches, params: LstmParams, mask, prefix: str = ""):
    names = ["w_forget", "w_input", "w_cell", "w_output",
             "v_forget", "v_input", "v_cell", "v_output",
             "b_forget", "b_input", "b_cell", "b_output"]
    g = {prefix + n: np.zeros_like(getattr(params, n)) for n in names}
    dc = np.zeros_like(ds)
    for xt, s_prev, c_prev, f, i, gg, o, tc in reversed(caches):
        if mask is not None:
            ds = ds * mask
        do = ds * tc
        dc = dc + ds * o * (1.0 - tc**2)
        df = dc * c_prev
        di = dc * gg
        dg = dc * i
        daf = df * f * (1.0 - f)
        dai = di * i * (1.0 - i)
        dag = dg * (1.0 - gg**2)
        dao = do * o * (1.0 - o)
        for tag, da in (("forget", daf), ("input", dai), ("cell", dag), ("output", dao)):
            g[prefix + "w_" + tag] += da.T @ xt
            g[prefix + "v_" + tag] += da.T @ s_prev
            g[prefix + "b_" + tag] += da.sum(axis=0)
        ds = (daf @ params.v_forget + dai @ params.v_input
              + dag @ params.v_cell + dao @ params.v_output)
        dc = dc * f
    return g


# --- single-sequence reference entry points ---------------------------------

def rnn_forward(sequence, params: RnnParams, head: OutputHead) -> np.ndarray:
    """Run the tanh recurrence over a (d, F) sequence; dense head gives (D, F)."""
    seq = np.asarray(sequence, dtype=np.float64)[None]
    s, _ = _rnn_run(seq, params, mask=None)
    out = head.apply(s)[0]
    return out.reshape(-1, seq.shape[2])


def lstm_forward(sequence, params: LstmParams, head: OutputHead) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64)[None]
    s, _ = _lstm_run(seq, params, mask=None)
    out = head.apply(s)[0]
    return out.reshape(-1, seq.shape[2])


def bilstm_forward(sequence, forward_params: LstmParams, backward_params: LstmParams,
                   head: OutputHead) -> np.ndarray:
    """Left-to-right and right-to-left passes combined by Hadamard product."""
    seq = np.asarray(sequence, dtype=np.float64)[None]
    s_fwd, _ = _lstm_run(seq, forward_params, mask=None)
    s_bwd, _ = _lstm_run(seq[:, ::-1], backward_params, mask=None)
    out = head.apply(s_fwd * s_bwd)[0]
    return out.reshape(-1, seq.shape[2])


# --- trainable predictor classes --------------------------------------------

class _RecurrentBase(Predictor):
    def _head_grads(self, dpred, hidden):
        dout = dpred.reshape(dpred.shape[0], -1)
        g_w = dout.T @ hidden
        g_b = dout.sum(axis=0)
        dhidden = dout @ self.head.weight
        return g_w, g_b, dhidden

    def _mask(self, batch, hidden, dropout, rng):
        if dropout <= 0.0 or rng is None:
            return None
        keep = 1.0 - dropout
        return (rng.random((batch, hidden)) < keep).astype(np.float64) / keep


@register_predictor
class RNNPredictor(_RecurrentBase):
    kind = "rnn"

    def __init__(self, d: int, horizon: int, feature_dim: int, n_h: int = 32, seed: int = 0):
        super().__init__(d, horizon, feature_dim)
        self.n_h = n_h
        rng = np.random.default_rng(seed)
        self.cell = RnnParams.create(feature_dim, n_h, rng)
        self.head = OutputHead(weight=_init(rng, horizon * feature_dim, n_h),
                               bias=np.zeros(horizon * feature_dim))
        self._seed = seed

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "RNNPredictor":
        return cls(hp["d"], hp["horizon"], hp["feature_dim"], hp["n_h"], hp.get("seed", 0))

    def hyperparams(self) -> dict:
        return {"d": self.d, "horizon": self.horizon, "feature_dim": self.feature_dim,
                "n_h": self.n_h, "seed": self._seed}

    def param_items(self):
        return [("w_in", self.cell.w_in), ("w_rec", self.cell.w_rec), ("bias", self.cell.bias),
                ("head_w", self.head.weight), ("head_b", self.head.bias)]

    def predict_features(self, x, origins=None, regressors=None):
        x = self.check_input(x)
        s, _ = _rnn_run(x, self.cell, mask=None)
        return self.head.apply(s).reshape(len(x), self.horizon, self.feature_dim)

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        x = self.check_input(x)
        mask = self._mask(len(x), self.n_h, dropout, rng)
        s, caches = _rnn_run(x, self.cell, mask)
        pred = self.head.apply(s).reshape(len(x), self.horizon, self.feature_dim)
        loss, dpred = huber_value_grad(pred, y, huber_beta)
        g_w, g_b, ds = self._head_grads(dpred, s)
        grads = _rnn_backward(ds, caches, self.cell, mask)
        grads["head_w"] = g_w
        grads["head_b"] = g_b
        return loss, grads


@register_predictor
class LSTMPredictor(_RecurrentBase):
    kind = "lstm"

    def __init__(self, d: int, horizon: int, feature_dim: int, n_h: int = 32, seed: int = 0):
        super().__init__(d, horizon, feature_dim)
        self.n_h = n_h
        rng = np.random.default_rng(seed)
        self.cell = LstmParams.create(feature_dim, n_h, rng)
        self.head = OutputHead(weight=_init(rng, horizon * feature_dim, n_h),
                               bias=np.zeros(horizon * feature_dim))
        self._seed = seed

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "LSTMPredictor":
        return cls(hp["d"], hp["horizon"], hp["feature_dim"], hp["n_h"], hp.get("seed", 0))

    def hyperparams(self) -> dict:
        return {"d": self.d, "horizon": self.horizon, "feature_dim": self.feature_dim,
                "n_h": self.n_h, "seed": self._seed}

    def param_items(self):
        items = [(f.name, getattr(self.cell, f.name)) for f in fields(self.cell)]
        items += [("head_w", self.head.weight), ("head_b", self.head.bias)]
        return items

    def predict_features(self, x, origins=None, regressors=None):
        x = self.check_input(x)
        s, _ = _lstm_run(x, self.cell, mask=None)
        return self.head.apply(s).reshape(len(x), self.horizon, self.feature_dim)

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        x = self.check_input(x)
        mask = self._mask(len(x), self.n_h, dropout, rng)
        s, caches = _lstm_run(x, self.cell, mask)
        pred = self.head.apply(s).reshape(len(x), self.horizon, self.feature_dim)
        loss, dpred = huber_value_grad(pred, y, huber_beta)
        g_w, g_b, ds = self._head_grads(dpred, s)
        grads = _lstm_backward(ds, caches, self.cell, mask)
        grads["head_w"] = g_w
        grads["head_b"] = g_b
        return loss, grads


@register_predictor
class BiLSTMPredictor(_RecurrentBase):
    kind = "bilstm"

    def __init__(self, d: int, horizon: int, feature_dim: int, n_h: int = 32, seed: int = 0):
        super().__init__(d, horizon, feature_dim)
        self.n_h = n_h
        rng = np.random.default_rng(seed)
        self.fwd = LstmParams.create(feature_dim, n_h, rng)
        self.bwd = LstmParams.create(feature_dim, n_h, rng)
        self.head = OutputHead(weight=_init(rng, horizon * feature_dim, n_h),
                               bias=np.zeros(horizon * feature_dim))
        self._seed = seed

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "BiLSTMPredictor":
        return cls(hp["d"], hp["horizon"], hp["feature_dim"], hp["n_h"], hp.get("seed", 0))

    def hyperparams(self) -> dict:
        return {"d": self.d, "horizon": self.horizon, "feature_dim": self.feature_dim,
                "n_h": self.n_h, "seed": self._seed}

    def param_items(self):
        items = [("fwd_" + f.name, getattr(self.fwd, f.name)) for f in fields(self.fwd)]
        items += [("bwd_" + f.name, getattr(self.bwd, f.name)) for f in fields(self.bwd)]
        items += [("head_w", self.head.weight), ("head_b", self.head.bias)]
        return items

    def predict_features(self, x, origins=None, regressors=None):
        x = self.check_input(x)
        s_f, _ = _lstm_run(x, self.fwd, mask=None)
        s_b, _ = _lstm_run(x[:, ::-1], self.bwd, mask=None)
        return self.head.apply(s_f * s_b).reshape(len(x), self.horizon, self.feature_dim)

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        x = self.check_input(x)
        mask_f = self._mask(len(x), self.n_h, dropout, rng)
        mask_b = self._mask(len(x), self.n_h, dropout, rng)
        s_f, caches_f = _lstm_run(x, self.fwd, mask_f)
        s_b, caches_b = _lstm_run(x[:, ::-1], self.bwd, mask_b)
        combined = s_f * s_b
        pred = self.head.apply(combined).reshape(len(x), self.horizon, self.feature_dim)
        loss, dpred = huber_value_grad(pred, y, huber_beta)
        g_w, g_b, du = self._head_grads(dpred, combined)
        grads = _lstm_backward(du * s_b, caches_f, self.fwd, mask_f, prefix="fwd_")
        grads.update(_lstm_backward(du * s_f, caches_b, self.bwd, mask_b, prefix="bwd_"))
        grads["head_w"] = g_w
        grads["head_b"] = g_b
        return loss, grads
