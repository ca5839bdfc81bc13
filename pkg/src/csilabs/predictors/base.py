"""Shared predictor interface, activations and checkpoint container.

Predictors map ``d`` past feature vectors to ``horizon`` future ones. Complex
channel snapshots are handled by stacking real and imaginary parts into a
2M-dimensional real feature vector per time step; training and inference run
entirely in the real domain.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..channel import stack_complex, unstack_complex

__all__ = [
    "Predictor",
    "TrainData",
    "OutputHead",
    "sigmoid",
    "relu",
    "predict_channel",
    "save_checkpoint",
    "load_checkpoint",
    "register_predictor",
]


def sigmoid(x):
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class TrainData:
    """Batched supervised arrays: inputs (N, d, F), targets (N, D, F),
    absolute time origins (N,) and optional per-sample future regressors."""

    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray
    regressors: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.origins = np.asarray(self.origins, dtype=np.float64)
        if self.x.ndim != 3 or self.y.ndim != 3:
            raise ValueError("x and y must have shape (N, steps, features)")
        if len(self.x) != len(self.y) or len(self.x) != len(self.origins):
            raise ValueError("inconsistent sample counts")
        if self.regressors is not None:
            self.regressors = np.asarray(self.regressors, dtype=np.float64)
            if self.regressors.shape != self.y.shape:
                raise ValueError("regressors must match target shape")

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_windows(cls, windows) -> "TrainData":
        """Build real-feature arrays from complex windowed samples."""
        x = np.stack([stack_complex(w.inputs) for w in windows])
        y = np.stack([stack_complex(w.labels) for w in windows])
        origins = np.array([w.origin for w in windows], dtype=np.float64)
        return cls(x=x, y=y, origins=origins)

    def subset(self, idx) -> "TrainData":
        reg = None if self.regressors is None else self.regressors[idx]
        return TrainData(self.x[idx], self.y[idx], self.origins[idx], reg)

    def with_regressors(self, regressors) -> "TrainData":
        return TrainData(self.x, self.y, self.origins, regressors)


@dataclass
class OutputHead:
    """Dense readout mapping a hidden state to horizon * feature outputs."""

    weight: np.ndarray
    bias: np.ndarray

    def apply(self, hidden: np.ndarray) -> np.ndarray:
        return hidden @ self.weight.T + self.bias


class Predictor:
    """Base class: concrete models implement the batched forward/backward."""

    kind: str = "base"

    def __init__(self, d: int, horizon: int, feature_dim: int):
        if d < 1 or horizon < 1 or feature_dim < 1:
            raise ValueError("d, horizon and feature_dim must all be >= 1")
        self.d = d
        self.horizon = horizon
        self.feature_dim = feature_dim

    # --- interface -------------------------------------------------------
    def param_items(self) -> list[tuple[str, np.ndarray]]:
        raise NotImplementedError

    def predict_features(self, x, origins=None, regressors=None) -> np.ndarray:
        """Inference on (N, d, F) inputs; dropout is never applied here."""
        raise NotImplementedError

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        raise NotImplementedError

    # --- shared helpers ---------------------------------------------------
    def loss(self, x, y, origins=None, regressors=None, *, huber_beta=1.0) -> float:
        value, _ = self.loss_grad(x, y, origins, regressors, huber_beta=huber_beta)
        return value

    def get_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.param_items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name, arr in self.param_items():
            arr[...] = params[name]

    def num_params(self) -> int:
        return int(sum(arr.size for _, arr in self.param_items()))

    def hyperparams(self) -> dict:
        """JSON-serializable constructor arguments (checkpoint header)."""
        raise NotImplementedError

    def check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.d or x.shape[2] != self.feature_dim:
            raise ValueError(
                f"expected input shape (N, {self.d}, {self.feature_dim}), got {x.shape}"
            )
        return x


def predict_channel(model, history, origin: int = 0, regressor=None) -> np.ndarray:
    """Run a predictor on a complex (d, M) history, returning (D, M) complex."""
    hist = np.asarray(history, dtype=np.complex128)
    x = stack_complex(hist)[None]
    origins = np.array([origin], dtype=np.float64)
    reg = None
    if regressor is not None:
        reg = stack_complex(np.asarray(regressor, dtype=np.complex128))[None]
    out = model.predict_features(x, origins=origins, regressors=reg)[0]
    return unstack_complex(out)


# --- checkpoint container --------------------------------------------------

_REGISTRY: dict[str, type] = {}
_CKPT_MAGIC = b"CPKT"
_CKPT_VERSION = 1


def register_predictor(cls):
    """Class decorator adding a model kind to the checkpoint registry."""
    _REGISTRY[cls.kind] = cls
    return cls


def save_checkpoint(model, path) -> None:
    """Write kind tag, hyperparameters and the flat float64 parameter array."""
    items = model.param_items()
    header = {
        "kind": model.kind,
        "hyperparams": model.hyperparams(),
        "params": [[name, list(arr.shape)] for name, arr in items],
    }
    payload = json.dumps(header).encode("utf-8")
    flat = np.concatenate([arr.ravel() for _, arr in items]) if items else np.empty(0)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(payload)))
        fh.write(payload)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a predictor from :func:`save_checkpoint` output, bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("not a predictor checkpoint file")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    kind = header["kind"]
    if kind not in _REGISTRY:
        raise ValueError(f"unknown predictor kind {kind!r}")
    model = _REGISTRY[kind].from_hyperparams(header["hyperparams"])
    flat = np.frombuffer(blob, dtype="<f8", offset=12 + header_len).astype(np.float64)
    expected = {name: tuple(shape) for name, shape in header["params"]}
    pos = 0
    for name, arr in model.param_items():
        if expected.get(name) != tuple(arr.shape):
            raise ValueError(f"checkpoint parameter {name!r} has shape {expected.get(name)}, "
                             f"model expects {tuple(arr.shape)}")
        n = arr.size
        arr[...] = flat[pos : pos + n].reshape(arr.shape)
        pos += n
    if pos != flat.size:
        raise ValueError("checkpoint parameter payload size mismatch")
    return model
