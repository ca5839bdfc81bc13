"""Two-stage forecaster: a recurrent model whose prediction is corrected by
the additive model through its future-regressor input.

Training is sequential: the recurrent stage is fitted first, its frozen
predictions are attached to every sample as regressors, then the corrective
stage is trained. With the regressor weights initialised to one and all other
components at zero, the composite starts out exactly equal to the recurrent
stage and can only be kept if it does not improve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import TrainData
from .neural_prophet import NPPredictor
from .training import TrainConfig, TrainResult, train

__all__ = ["HybridPredictor", "hybrid_predict", "train_hybrid"]


@dataclass
class HybridPredictor:
    """Recurrent stage feeding the corrective stage's regressor input."""

    stage_one: object
    correction: NPPredictor
    kind: str = "hybrid"

    def __post_init__(self):
        a, b = self.stage_one, self.correction
        if (a.d, a.horizon, a.feature_dim) != (b.d, b.horizon, b.feature_dim):
            raise ValueError(
                f"stage shapes differ: ({a.d}, {a.horizon}, {a.feature_dim}) vs "
                f"({b.d}, {b.horizon}, {b.feature_dim})"
            )
        if b.regressor_weights is None:
            raise ValueError("correction stage must be built with a future regressor")

    @property
    def d(self):
        return self.stage_one.d

    @property
    def horizon(self):
        return self.stage_one.horizon

    @property
    def feature_dim(self):
        return self.stage_one.feature_dim

    def predict_features(self, x, origins=None, regressors=None):
        reg = self.stage_one.predict_features(x)
        return self.correction.predict_features(x, origins=origins, regressors=reg)


def hybrid_predict(history, stage_one, correction: NPPredictor, origin: int = 0) -> np.ndarray:
    """Single-history forecast through both stages ((d, F) real features in)."""
    x = np.asarray(history, dtype=np.float64)[None]
    origins = np.array([origin], dtype=np.float64)
    reg = stage_one.predict_features(x)
    return correction.predict_features(x, origins=origins, regressors=reg)[0]


def train_hybrid(stage_one, correction: NPPredictor, data: TrainData,
                 stage_one_config: TrainConfig, correction_config: TrainConfig,
                 validation: TrainData | None = None):
    """Fit both stages in order; returns the composite plus both histories."""
    first = train(stage_one, data, stage_one_config, validation=validation)
    reg_train = stage_one.predict_features(data.x)
    data_with_reg = data.with_regressors(reg_train)
    val_with_reg = None
    if validation is not None:
        val_with_reg = validation.with_regressors(stage_one.predict_features(validation.x))
    second = train(correction, data_with_reg, correction_config, validation=val_with_reg)
    model = HybridPredictor(stage_one=stage_one, correction=correction)
    return model, (first, second)
