"""Additive decomposable forecaster: trend + seasonality + AR network.

The trend is piecewise linear over absolute time with fixed change-points and
trainable growth/offset adjustments; seasonality is a Fourier expansion over a
set of periodicities (disabled by default); the autoregressive component is a
small feed-forward ReLU network whose first layer plays the role of the AR
coefficients and whose output layer is linear with no bias. An optional future
regressor (here: another predictor's output) enters through trainable per-step
weights, which is how the hybrid model is wired.

The model is univariate by construction: the same parameters are applied to
every feature channel independently, while trend and seasonality depend only
on absolute time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Predictor, register_predictor, relu
from .training import huber_value_grad

__all__ = [
    "TrendParams",
    "SeasonalityParams",
    "ArNetParams",
    "np_trend",
    "np_seasonality",
    "arnet_forward",
    "np_predict",
    "make_changepoints",
    "NPPredictor",
]


@dataclass
class TrendParams:
    """Piecewise-linear trend: rate and offset change at fixed change-points.

    ``time_scale`` rescales the time axis inside the slope term only; the
    default of 1.0 keeps the textbook formula, while training factories use
    1/(training range) so slope gradients stay well conditioned.
    """

    base_growth: np.ndarray
    base_offset: np.ndarray
    changepoints: np.ndarray
    growth_deltas: np.ndarray
    offset_deltas: np.ndarray
    time_scale: float = 1.0

    def __post_init__(self):
        self.base_growth = np.asarray(self.base_growth, dtype=np.float64)
        self.base_offset = np.asarray(self.base_offset, dtype=np.float64)
        self.changepoints = np.asarray(self.changepoints, dtype=np.float64)
        self.growth_deltas = np.asarray(self.growth_deltas, dtype=np.float64)
        self.offset_deltas = np.asarray(self.offset_deltas, dtype=np.float64)
        if self.changepoints.ndim != 1:
            raise ValueError("changepoints must be 1-D")
        if np.any(np.diff(self.changepoints) <= 0):
            raise ValueError("changepoints must be strictly increasing")
        if self.growth_deltas.shape != self.changepoints.shape:
            raise ValueError("growth_deltas must match changepoints")
        if self.offset_deltas.shape != self.changepoints.shape:
            raise ValueError("offset_deltas must match changepoints")

    @classmethod
    def create(cls, changepoints=(), time_scale: float = 1.0) -> "TrendParams":
        cp = np.asarray(changepoints, dtype=np.float64)
        return cls(base_growth=np.array(0.0), base_offset=np.array(0.0),
                   changepoints=cp, growth_deltas=np.zeros(cp.shape),
                   offset_deltas=np.zeros(cp.shape), time_scale=time_scale)


def make_changepoints(t_start: float, t_end: float, count: int,
                      coverage: float = 0.95) -> np.ndarray:
    """``count`` change-points uniformly spaced over the first ``coverage``
    fraction of [t_start, t_end]."""
    if count <= 0:
        return np.empty(0)
    span = (t_end - t_start) * coverage
    return t_start + span * (np.arange(1, count + 1) / (count + 1))


def np_trend(t, trend: TrendParams):
    """Trend value at time(s) t; a change-point takes effect from t >= n_j."""
    t = np.asarray(t, dtype=np.float64)
    gamma = (t[..., None] >= trend.changepoints).astype(np.float64)
    growth = trend.base_growth + gamma @ trend.growth_deltas
    offset = trend.base_offset + gamma @ trend.offset_deltas
    out = growth * (t * trend.time_scale) + offset
    return float(out) if out.ndim == 0 else out


@dataclass
class SeasonalityParams:
    """Fourier seasonality over a set of periodicities; off by default."""

    enabled: bool = False
    periods: tuple = ()
    order: int = 0
    cos_coef: np.ndarray | None = None
    sin_coef: np.ndarray | None = None

    def __post_init__(self):
        if self.enabled:
            if not self.periods or self.order < 1:
                raise ValueError("enabled seasonality needs periods and order >= 1")
            shape = (len(self.periods), self.order)
            if self.cos_coef is None:
                self.cos_coef = np.zeros(shape)
            if self.sin_coef is None:
                self.sin_coef = np.zeros(shape)
            self.cos_coef = np.asarray(self.cos_coef, dtype=np.float64)
            self.sin_coef = np.asarray(self.sin_coef, dtype=np.float64)
            if self.cos_coef.shape != shape or self.sin_coef.shape != shape:
                raise ValueError(f"coefficient arrays must have shape {shape}")


def _season_basis(t, seas: SeasonalityParams):
    t = np.asarray(t, dtype=np.float64)
    periods = np.asarray(seas.periods, dtype=np.float64)
    orders = np.arange(1, seas.order + 1, dtype=np.float64)
    ang = 2.0 * np.pi * t[..., None, None] * orders / periods[:, None]
    return np.cos(ang), np.sin(ang)


def np_seasonality(t, seas: SeasonalityParams):
    """Summed Fourier terms over all periodicities at time(s) t."""
    if not seas.enabled:
        raise ValueError("seasonality is disabled")
    cos_b, sin_b = _season_basis(t, seas)
    out = np.sum(cos_b * seas.cos_coef + sin_b * seas.sin_coef, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


@dataclass
class ArNetParams:
    """Feed-forward AR network: ReLU hidden layers, linear bias-free output.

    ``weights`` holds l+1 matrices (first layer maps the d lags, the last maps
    to the horizon); ``biases`` one vector per hidden layer.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) + 1:
            raise ValueError("need exactly one more weight matrix than bias vectors")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim mismatch")

    @property
    def hidden_layers(self) -> int:
        return len(self.biases)

    @classmethod
    def create(cls, d: int, horizon: int, n_h: int, hidden_layers: int, rng) -> "ArNetParams":
        if hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        dims = [d] + [n_h] * hidden_layers
        weights = []
        for i in range(hidden_layers):
            lim = 1.0 / np.sqrt(dims[i])
            weights.append(rng.uniform(-lim, lim, size=(dims[i + 1], dims[i])))
        lim = 1.0 / np.sqrt(n_h)
        weights.append(rng.uniform(-lim, lim, size=(horizon, n_h)))
        biases = [np.zeros(n_h) for _ in range(hidden_layers)]
        return cls(weights=weights, biases=biases)


def arnet_forward(z, arnet: ArNetParams) -> np.ndarray:
    """Map the last d observations (or a batch of them) to horizon outputs."""
    h = np.asarray(z, dtype=np.float64)
    for w, b in zip(arnet.weights[:-1], arnet.biases):
        h = relu(h @ w.T + b)
    return h @ arnet.weights[-1].T


def _arnet_run(z, arnet: ArNetParams):
    h = z
    activations = []  # post-ReLU layer outputs
    for w, b in zip(arnet.weights[:-1], arnet.biases):
        h = relu(h @ w.T + b)
        activations.append(h)
    return h @ arnet.weights[-1].T, activations


def _arnet_backward(dout, z, activations, arnet: ArNetParams):
    g_w = [None] * len(arnet.weights)
    g_b = [None] * len(arnet.biases)
    g_w[-1] = dout.T @ (activations[-1] if activations else z)
    dh = dout @ arnet.weights[-1]
    for layer in range(len(arnet.biases) - 1, -1, -1):
        da = dh * (activations[layer] > 0)
        below = z if layer == 0 else activations[layer - 1]
        g_w[layer] = da.T @ below
        g_b[layer] = da.sum(axis=0)
        dh = da @ arnet.weights[layer]
    return g_w, g_b


def np_predict(history, model: "NPPredictor", future_regressor=None,
               origin: int = 0) -> np.ndarray:
    """Single-history forecast: additive sum of all enabled components.

    ``history`` is the real (d, F) feature window; the optional regressor has
    the output shape (D, F).
    """
    x = np.asarray(history, dtype=np.float64)[None]
    reg = None if future_regressor is None else np.asarray(future_regressor, dtype=np.float64)[None]
    return model.predict_features(x, origins=np.array([origin], dtype=np.float64), regressors=reg)[0]


@register_predictor
class NPPredictor(Predictor):
    """Trainable additive model; see the module docstring for the components."""

    kind = "np"

    def __init__(self, d: int, horizon: int, feature_dim: int, n_h: int = 32,
                 hidden_layers: int = 4, changepoints=(), time_scale: float = 1.0,
                 seasonality: SeasonalityParams | None = None,
                 with_regressor: bool = False, regressor_init: float = 1.0,
                 seed: int = 0):
        super().__init__(d, horizon, feature_dim)
        rng = np.random.default_rng(seed)
        self.n_h = n_h
        self.trend = TrendParams.create(changepoints, time_scale)
        self.seasonality = seasonality or SeasonalityParams()
        self.arnet = ArNetParams.create(d, horizon, n_h, hidden_layers, rng)
        self.regressor_weights = np.full(horizon, regressor_init) if with_regressor else None
        self._seed = seed
        self._regressor_init = regressor_init

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "NPPredictor":
        seas = SeasonalityParams(enabled=hp.get("season_enabled", False),
                                 periods=tuple(hp.get("season_periods", ())),
                                 order=hp.get("season_order", 0))
        return cls(hp["d"], hp["horizon"], hp["feature_dim"], hp["n_h"],
                   hp["hidden_layers"], changepoints=hp.get("changepoints", ()),
                   time_scale=hp.get("time_scale", 1.0), seasonality=seas,
                   with_regressor=hp.get("with_regressor", False),
                   regressor_init=hp.get("regressor_init", 1.0), seed=hp.get("seed", 0))

    def hyperparams(self) -> dict:
        return {"d": self.d, "horizon": self.horizon, "feature_dim": self.feature_dim,
                "n_h": self.n_h, "hidden_layers": self.arnet.hidden_layers,
                "changepoints": list(map(float, self.trend.changepoints)),
                "time_scale": self.trend.time_scale,
                "season_enabled": self.seasonality.enabled,
                "season_periods": list(map(float, self.seasonality.periods)),
                "season_order": self.seasonality.order,
                "with_regressor": self.regressor_weights is not None,
                "regressor_init": self._regressor_init, "seed": self._seed}

    def param_items(self):
        items = [("base_growth", self.trend.base_growth),
                 ("base_offset", self.trend.base_offset),
                 ("growth_deltas", self.trend.growth_deltas),
                 ("offset_deltas", self.trend.offset_deltas)]
        if self.seasonality.enabled:
            items += [("season_cos", self.seasonality.cos_coef),
                      ("season_sin", self.seasonality.sin_coef)]
        for i, w in enumerate(self.arnet.weights):
            items.append((f"arnet_w{i}", w))
        for i, b in enumerate(self.arnet.biases):
            items.append((f"arnet_b{i}", b))
        if self.regressor_weights is not None:
            items.append(("regressor_w", self.regressor_weights))
        return items

    # --- forward pieces ---------------------------------------------------
    def _times(self, origins) -> np.ndarray:
        if origins is None:
            origins = np.zeros(1)
        origins = np.asarray(origins, dtype=np.float64)
        return origins[:, None] + np.arange(self.horizon)

    def _forward(self, x, origins, regressors):
        batch = len(x)
        t_out = self._times(origins)
        if t_out.shape[0] == 1 and batch > 1:
            t_out = np.repeat(t_out, batch, axis=0)
        gamma = (t_out[..., None] >= self.trend.changepoints).astype(np.float64)
        growth = self.trend.base_growth + gamma @ self.trend.growth_deltas
        offset = self.trend.base_offset + gamma @ self.trend.offset_deltas
        combined = growth * (t_out * self.trend.time_scale) + offset
        season = None
        if self.seasonality.enabled:
            cos_b, sin_b = _season_basis(t_out, self.seasonality)
            combined = combined + np.sum(cos_b * self.seasonality.cos_coef
                                         + sin_b * self.seasonality.sin_coef, axis=(-2, -1))
            season = (cos_b, sin_b)
        z = x.transpose(0, 2, 1).reshape(batch * self.feature_dim, self.d)
        ar_out, activations = _arnet_run(z, self.arnet)
        pred = ar_out.reshape(batch, self.feature_dim, self.horizon).transpose(0, 2, 1)
        pred = pred + combined[..., None]
        if self.regressor_weights is not None and regressors is not None:
            pred = pred + self.regressor_weights[None, :, None] * regressors
        return pred, (t_out, gamma, season, z, activations)

    def predict_features(self, x, origins=None, regressors=None):
        x = self.check_input(x)
        pred, _ = self._forward(x, origins, regressors)
        return pred

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        x = self.check_input(x)
        if self.regressor_weights is not None and regressors is None:
            raise ValueError("model was built with a future regressor but none was given")
        if regressors is not None and np.shape(regressors) != np.shape(y):
            raise ValueError(f"regressor shape {np.shape(regressors)} must match targets {np.shape(y)}")
        pred, (t_out, gamma, season, z, activations) = self._forward(x, origins, regressors)
        loss, dpred = huber_value_grad(pred, y, huber_beta)

        batch = len(x)
        d_shared = dpred.sum(axis=2)  # (batch, horizon): trend/seasonality are feature-shared
        ts = t_out * self.trend.time_scale
        grads = {
            "base_growth": np.asarray((d_shared * ts).sum()),
            "base_offset": np.asarray(d_shared.sum()),
            "growth_deltas": np.einsum("bj,bjm->m", d_shared * ts, gamma),
            "offset_deltas": np.einsum("bj,bjm->m", d_shared, gamma),
        }
        if self.seasonality.enabled:
            cos_b, sin_b = season
            grads["season_cos"] = np.einsum("bj,bjpo->po", d_shared, cos_b)
            grads["season_sin"] = np.einsum("bj,bjpo->po", d_shared, sin_b)
        d_ar = dpred.transpose(0, 2, 1).reshape(batch * self.feature_dim, self.horizon)
        g_w, g_b = _arnet_backward(d_ar, z, activations, self.arnet)
        for i, g in enumerate(g_w):
            grads[f"arnet_w{i}"] = g
        for i, g in enumerate(g_b):
            grads[f"arnet_b{i}"] = g
        if self.regressor_weights is not None:
            grads["regressor_w"] = np.einsum("bjf,bjf->j", dpred, regressors)
        return loss, grads
