"""Classic linear autoregression with per-lag scalar coefficients.

One coefficient per (output step, lag), applied element-wise across all
features, plus a per-step intercept. This mirrors the scalar AR recurrence
the synthetic traces are generated from, so learned first-lag coefficients
are directly comparable with the generator's.
"""

from __future__ import annotations

import numpy as np

from .base import Predictor, register_predictor
from .training import huber_value_grad

__all__ = ["LinearARPredictor"]


@register_predictor
class LinearARPredictor(Predictor):
    kind = "linear_ar"

    def __init__(self, d: int, horizon: int, feature_dim: int):
        super().__init__(d, horizon, feature_dim)
        # coefficients[j, e]: weight of the (e+1)-lag input for output step j
        self.coefficients = np.zeros((horizon, d))
        self.intercept = np.zeros(horizon)

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "LinearARPredictor":
        return cls(hp["d"], hp["horizon"], hp["feature_dim"])

    def hyperparams(self) -> dict:
        return {"d": self.d, "horizon": self.horizon, "feature_dim": self.feature_dim}

    def param_items(self):
        return [("coefficients", self.coefficients), ("intercept", self.intercept)]

    def predict_features(self, x, origins=None, regressors=None):
        x = self.check_input(x)
        recent_first = x[:, ::-1, :]
        return np.einsum("je,bef->bjf", self.coefficients, recent_first) + self.intercept[None, :, None]

    def loss_grad(self, x, y, origins=None, regressors=None, *, huber_beta=1.0,
                  dropout=0.0, rng=None):
        x = self.check_input(x)
        pred = self.predict_features(x)
        loss, dpred = huber_value_grad(pred, y, huber_beta)
        recent_first = x[:, ::-1, :]
        grads = {
            "coefficients": np.einsum("bjf,bef->je", dpred, recent_first),
            "intercept": dpred.sum(axis=(0, 2)),
        }
        return loss, grads
