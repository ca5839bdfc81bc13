"""Huber-loss training loop, grid search and finite-difference gradient audit.

Mini-batch gradient descent with adaptive moment estimation; the best
parameter snapshot (validation score if a validation set is given, training
loss otherwise) is restored at the end of the fixed epoch budget. Everything
is deterministic for a fixed config seed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .base import TrainData

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "huber_loss",
    "huber_value_grad",
    "train",
    "nmse_score",
    "GridSearchResult",
    "grid_search",
    "gradient_check",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; defaults follow the usual small-model recipe."""

    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    huber_beta: float = 1.0
    dropout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (self.huber_beta > 0):
            raise ValueError("huber_beta must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")


def huber_loss(pred, label, beta: float = 1.0) -> float:
    """Mean element-wise Huber cost: e^2/(2*beta) inside |e| <= beta, |e| - beta/2 outside."""
    value, _ = huber_value_grad(pred, label, beta)
    return value


def huber_value_grad(pred, label, beta: float):
    """Loss value and its gradient with respect to the prediction array."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {label.shape}")
    err = pred - label
    abs_err = np.abs(err)
    quad = abs_err <= beta
    cost = np.where(quad, err**2 / (2.0 * beta), abs_err - beta / 2.0)
    grad = np.where(quad, err / beta, np.sign(err)) / err.size
    return float(cost.mean()), grad


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params, grads) -> None:
        cfg = self.cfg
        self.step += 1
        bc1 = 1.0 - cfg.beta1**self.step
        bc2 = 1.0 - cfg.beta2**self.step
        for name, arr in params:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * g**2
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            arr -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def nmse_score(model, data: TrainData) -> float:
    """Mean over samples of squared-error-to-target-power ratios."""
    pred = model.predict_features(data.x, data.origins, data.regressors)
    err = np.sum((pred - data.y) ** 2, axis=(1, 2))
    power = np.sum(data.y**2, axis=(1, 2))
    if np.any(power == 0):
        raise ValueError("nmse score undefined for zero-power targets")
    return float(np.mean(err / power))


@dataclass
class TrainResult:
    model: object
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("inf")


def train(model, data: TrainData, config: TrainConfig = TrainConfig(),
          validation: TrainData | None = None) -> TrainResult:
    """Fit in place and return the model restored to its best checkpoint.

    The epoch-0 (untrained) state participates in the best-checkpoint
    selection, so the returned model is never worse than the initial one
    under the tracked score.
    """
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model=model)
    if config.epochs == 0:
        return result

    def score_now() -> float:
        if validation is not None:
            return nmse_score(model, validation)
        return model.loss(data.x, data.y, data.origins, data.regressors,
                          huber_beta=config.huber_beta)

    best_params = model.get_params()
    result.best_score = score_now()
    result.best_epoch = 0

    adam = _Adam(config)
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = data.subset(idx)
            loss, grads = model.loss_grad(
                batch.x, batch.y, batch.origins, batch.regressors,
                huber_beta=config.huber_beta, dropout=config.dropout, rng=rng,
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: learning rate "
                    f"{config.learning_rate} likely too large"
                )
            epoch_losses.append(loss)
            adam.update(model.param_items(), grads)
        result.loss_history.append(float(np.mean(epoch_losses)))
        score = score_now()
        if validation is not None:
            result.val_history.append(score)
        if score < result.best_score:
            result.best_score = score
            result.best_epoch = epoch
            best_params = model.get_params()

    model.set_params(best_params)
    return result


@dataclass
class GridSearchResult:
    best_point: dict
    best_config: TrainConfig
    best_model: object
    best_score: float
    table: list[tuple[dict, float]]


_MODEL_KEYS = ("n_h", "hidden_layers")


def grid_search(space: dict, train_data: TrainData, val_data: TrainData, *,
                factory, base: TrainConfig = TrainConfig()) -> GridSearchResult:
    """Exhaustively train every point of the Cartesian ``space``.

    ``factory(point)`` must build a fresh model for a point (a dict mapping
    space keys to values); keys that match :class:`TrainConfig` fields are
    applied on top of ``base``. Points scoring NaN (divergence) lose. Ties
    break toward the smallest model (n_h, then hidden_layers), then first
    enumeration order.
    """
    keys = list(space.keys())
    if not keys or any(len(space[k]) == 0 for k in keys):
        raise ValueError("grid space must be a non-empty Cartesian product")
    cfg_fields = set(TrainConfig.__dataclass_fields__)
    table: list[tuple[dict, float]] = []
    candidates = []
    for index, combo in enumerate(itertools.product(*(space[k] for k in keys))):
        point = dict(zip(keys, combo))
        cfg = replace(base, **{k: v for k, v in point.items() if k in cfg_fields})
        model = factory(point)
        try:
            train(model, train_data, cfg, validation=val_data)
            score = nmse_score(model, val_data)
        except TrainingDiverged:
            score = float("inf")
        if not np.isfinite(score):
            score = float("inf")
        table.append((point, score))
        size_key = tuple(point.get(k, 0) for k in _MODEL_KEYS)
        candidates.append((score, size_key, index, point, cfg, model))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    best = candidates[0]
    return GridSearchResult(best_point=best[3], best_config=best[4],
                            best_model=best[5], best_score=best[0], table=table)


def gradient_check(model, data: TrainData, *, eps: float = 1e-5,
                   sample_size: int = 50, huber_beta: float = 1.0,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random subsample of at least ``sample_size`` scalar parameters
    (all of them if the model is smaller). Dropout is disabled so the loss is
    a deterministic function of the parameters.
    """
    args = (data.x, data.y, data.origins, data.regressors)
    _, grads = model.loss_grad(*args, huber_beta=huber_beta, dropout=0.0)
    items = model.param_items()
    total = sum(arr.size for _, arr in items)
    if total == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    count = min(sample_size, total)
    picks = rng.choice(total, size=count, replace=False)
    offsets = np.cumsum([0] + [arr.size for _, arr in items])
    worst = 0.0
    for flat_idx in picks:
        slot = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, arr = items[slot]
        local = np.unravel_index(int(flat_idx - offsets[slot]), arr.shape)
        orig = arr[local]
        arr[local] = orig + eps
        up = model.loss(*args, huber_beta=huber_beta)
        arr[local] = orig - eps
        down = model.loss(*args, huber_beta=huber_beta)
        arr[local] = orig
        numeric = (up - down) / (2.0 * eps)
        analytic = grads[name][local]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
