"""Trainable channel predictors and their training machinery."""

from .base import (
    OutputHead,
    Predictor,
    TrainData,
    load_checkpoint,
    predict_channel,
    save_checkpoint,
)
from .hybrid import HybridPredictor, hybrid_predict, train_hybrid
from .linear_ar import LinearARPredictor
from .neural_prophet import (
    ArNetParams,
    NPPredictor,
    SeasonalityParams,
    TrendParams,
    arnet_forward,
    make_changepoints,
    np_predict,
    np_seasonality,
    np_trend,
)
from .recurrent import (
    BiLSTMPredictor,
    LSTMPredictor,
    LstmParams,
    RNNPredictor,
    RnnParams,
    bilstm_forward,
    lstm_cell_forward,
    lstm_forward,
    rnn_forward,
)
from .training import (
    GridSearchResult,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    gradient_check,
    grid_search,
    huber_loss,
    nmse_score,
    train,
)

__all__ = [
    "Predictor",
    "TrainData",
    "OutputHead",
    "predict_channel",
    "save_checkpoint",
    "load_checkpoint",
    "LinearARPredictor",
    "RNNPredictor",
    "LSTMPredictor",
    "BiLSTMPredictor",
    "NPPredictor",
    "HybridPredictor",
    "RnnParams",
    "LstmParams",
    "TrendParams",
    "SeasonalityParams",
    "ArNetParams",
    "lstm_cell_forward",
    "rnn_forward",
    "lstm_forward",
    "bilstm_forward",
    "np_trend",
    "np_seasonality",
    "arnet_forward",
    "np_predict",
    "make_changepoints",
    "hybrid_predict",
    "train_hybrid",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "huber_loss",
    "train",
    "nmse_score",
    "grid_search",
    "GridSearchResult",
    "gradient_check",
    "make_predictor",
]


def make_predictor(kind: str, d: int, horizon: int, feature_dim: int, *,
                   n_h: int = 32, hidden_layers: int = 4, seed: int = 0, **kwargs):
    """Build a predictor of the named kind with desk-scale defaults."""
    if kind == "linear_ar":
        return LinearARPredictor(d, horizon, feature_dim)
    if kind == "rnn":
        return RNNPredictor(d, horizon, feature_dim, n_h=n_h, seed=seed)
    if kind == "lstm":
        return LSTMPredictor(d, horizon, feature_dim, n_h=n_h, seed=seed)
    if kind == "bilstm":
        return BiLSTMPredictor(d, horizon, feature_dim, n_h=n_h, seed=seed)
    if kind == "np":
        return NPPredictor(d, horizon, feature_dim, n_h=n_h,
                           hidden_layers=hidden_layers, seed=seed, **kwargs)
    raise ValueError(f"unknown predictor kind {kind!r}")
