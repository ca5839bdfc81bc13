"""Single-UE feedback loop with base-station-side learning.

The BS trains a channel predictor on an initial trace segment, distils it
into an M x M transition matrix (the lightweight predictor function) by
least squares over predicted/reported pairs, verifies it, and reports it to
the UE. From then on both ends run the identical matrix on an identical
shared state (the most recently acquired channel), so the UE only feeds back
the quantized difference between its prediction and its fresh estimate, and
the BS undoes that difference to retrieve the estimate:

    acquired = predicted_bs - decode(quantize(predicted_ue - estimated))

A suppressed (all-components-small) update costs zero uplink bits and leaves
the BS on its own prediction. Baselines: raw compressed reporting without any
prediction, and the same loop with the full predictor evaluated at both ends
instead of the transition matrix.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelTrace, normalize_trace, stack_complex, window_trace
from .metrics import cosine_similarity_stream, nmse_stream, precoding_gain_stream
from .predictors import TrainConfig, TrainData, make_predictor, predict_channel, train
from .quantizer import (
    QuantizedVector,
    QuantizerConfig,
    calibrate_clip_range,
    overhead_bits,
    pack_levels,
    quantize,
    unpack_levels,
)

__all__ = [
    "PredictorFunction",
    "UpdateVector",
    "QuantizedUpdate",
    "AcquiredChannel",
    "Provenance",
    "VerificationResult",
    "LoopPolicy",
    "LoopAborted",
    "SingleUeResult",
    "fit_pf",
    "verify_pf",
    "predict_with_pf",
    "compute_update",
    "encode_feedback",
    "retrieve_csi",
    "baseline_without_ml",
    "run_single_ue_loop",
    "encode_feedback_record",
    "decode_feedback_record",
]


class Provenance(enum.Enum):
    OPEN_LOOP = "open_loop"
    UPDATED = "updated"
    BASELINE_WITHOUT_ML = "baseline_without_ml"


@dataclass
class PredictorFunction:
    """Transition matrix reported BS -> UE, with its fitting residual."""

    matrix: np.ndarray
    fit_residual: float = 0.0
    source_window: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m.view(np.float64))):
            raise ValueError("transition matrix contains non-finite entries")
        if self.fit_residual < 0:
            raise ValueError("fit residual must be >= 0")
        self.matrix = m

    @property
    def antennas(self) -> int:
        return self.matrix.shape[0]


def fit_pf(predicted, reported, rcond: float = 1e-10, source_window: str = "") -> PredictorFunction:
    """Least-squares transition matrix from predicted/reported column pairs.

    ``predicted`` and ``reported`` are (L, M) arrays (or lists of vectors);
    the returned matrix is the minimum-Frobenius-norm minimizer of
    ``|F @ reported.T - predicted.T|_F``, computed through the SVD-based
    pseudo-inverse with singular values below ``rcond * sigma_max`` dropped.
    """
    num = np.asarray(predicted, dtype=np.complex128)
    den = np.asarray(reported, dtype=np.complex128)
    if num.ndim != 2 or den.ndim != 2 or num.shape != den.shape:
        raise ValueError(f"need matching (L, M) pair arrays, got {num.shape} and {den.shape}")
    if len(num) < 1:
        raise ValueError("need at least one predicted/reported pair")
    if not (np.all(np.isfinite(num.view(np.float64))) and np.all(np.isfinite(den.view(np.float64)))):
        raise ValueError("pair arrays contain non-finite entries")
    n_mat = num.T
    d_mat = den.T
    matrix = n_mat @ np.linalg.pinv(d_mat, rcond=rcond)
    residual = float(np.linalg.norm(matrix @ d_mat - n_mat))
    return PredictorFunction(matrix=matrix, fit_residual=residual, source_window=source_window)


@dataclass(frozen=True)
class VerificationResult:
    accepted: bool
    mse: float


def verify_pf(pf: PredictorFunction, probes, threshold: float) -> VerificationResult:
    """Mean squared one-step error of the matrix over (past, current) probes.

    Each probe pairs the (quantized) past estimate the matrix will be applied
    to with the estimate it should predict; accept iff the per-antenna MSE is
    within the threshold. A rejection signals the caller to retrain.
    """
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one verification probe")
    errs = []
    for past, current in probes:
        past = np.asarray(past, dtype=np.complex128)
        current = np.asarray(current, dtype=np.complex128)
        diff = pf.matrix @ past - current
        errs.append(np.sum(np.abs(diff) ** 2) / pf.antennas)
    mse = float(np.mean(errs))
    return VerificationResult(accepted=mse <= threshold, mse=mse)


def predict_with_pf(pf: PredictorFunction, past_estimate) -> np.ndarray:
    """Matrix-vector prediction; identical at both ends for identical inputs."""
    v = np.asarray(past_estimate, dtype=np.complex128)
    if v.shape != (pf.antennas,):
        raise ValueError(f"expected vector of length {pf.antennas}, got shape {v.shape}")
    return pf.matrix @ v


@dataclass(frozen=True)
class UpdateVector:
    """Prediction-minus-estimate difference, or the explicit no-feedback marker."""

    omega: np.ndarray | None

    @classmethod
    def none(cls) -> "UpdateVector":
        return cls(omega=None)

    @property
    def is_none(self) -> bool:
        return self.omega is None


def compute_update(predicted_ue, estimated, suppression_tol: float = 0.0) -> UpdateVector:
    """Difference update, suppressed when no component modulus exceeds the tolerance."""
    pred = np.asarray(predicted_ue, dtype=np.complex128)
    est = np.asarray(estimated, dtype=np.complex128)
    if pred.shape != est.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {est.shape}")
    omega = pred - est
    if np.max(np.abs(omega), initial=0.0) <= suppression_tol:
        return UpdateVector.none()
    return UpdateVector(omega=omega)


@dataclass(frozen=True)
class QuantizedUpdate:
    """Compressed update ready for the uplink; ``bits`` is None when the
    codec is lossless (unbounded) and 0 when feedback is suppressed."""

    payload: QuantizedVector | None
    bits: int | None

    @classmethod
    def none(cls) -> "QuantizedUpdate":
        return cls(payload=None, bits=0)

    @property
    def is_none(self) -> bool:
        return self.payload is None

    def decode(self) -> np.ndarray | None:
        return None if self.payload is None else self.payload.reconstruct()


def encode_feedback(update: UpdateVector, config: QuantizerConfig) -> QuantizedUpdate:
    """Quantize a pending update; the no-feedback marker passes through at zero cost."""
    if update.is_none:
        return QuantizedUpdate.none()
    payload = quantize(update.omega, config)
    bits = None if config.is_lossless else overhead_bits(config, update.omega.shape[0])
    return QuantizedUpdate(payload=payload, bits=bits)


@dataclass(frozen=True)
class AcquiredChannel:
    vector: np.ndarray
    provenance: Provenance


def retrieve_csi(predicted_bs, feedback: QuantizedUpdate) -> AcquiredChannel:
    """BS-side channel retrieval: subtract the decoded update, or fall back
    to the open-loop prediction when nothing was fed back."""
    pred = np.asarray(predicted_bs, dtype=np.complex128)
    if feedback.is_none:
        return AcquiredChannel(vector=pred.copy(), provenance=Provenance.OPEN_LOOP)
    decoded = feedback.decode()
    if decoded.shape != pred.shape:
        raise ValueError(f"update length {decoded.shape} does not match prediction {pred.shape}")
    return AcquiredChannel(vector=pred - decoded, provenance=Provenance.UPDATED)


def baseline_without_ml(estimated, config: QuantizerConfig) -> AcquiredChannel:
    """Conventional reporting: the acquired channel is the codec round-trip
    of the raw estimate."""
    est = np.asarray(estimated, dtype=np.complex128)
    recon = quantize(est, config).reconstruct()
    return AcquiredChannel(vector=recon, provenance=Provenance.BASELINE_WITHOUT_ML)


# --- uplink feedback record --------------------------------------------------

_FLAG_NONE, _FLAG_UPDATE, _FLAG_RAW = 0, 1, 2


def encode_feedback_record(message: QuantizedUpdate | QuantizedVector | None) -> bytes:
    """Wire format: flag byte (none / update / raw report), then packed levels."""
    if message is None or (isinstance(message, QuantizedUpdate) and message.is_none):
        return bytes([_FLAG_NONE])
    if isinstance(message, QuantizedUpdate):
        return bytes([_FLAG_UPDATE]) + pack_levels(message.payload)
    if isinstance(message, QuantizedVector):
        return bytes([_FLAG_RAW]) + pack_levels(message)
    raise TypeError(f"cannot encode {type(message).__name__}")


def decode_feedback_record(blob: bytes, antennas: int, config: QuantizerConfig):
    """Inverse of :func:`encode_feedback_record`; returns a QuantizedUpdate or,
    for raw reports, the QuantizedVector itself."""
    if len(blob) < 1:
        raise ValueError("empty feedback record")
    flag = blob[0]
    if flag == _FLAG_NONE:
        return QuantizedUpdate.none()
    payload = unpack_levels(blob[1:], antennas, config)
    if flag == _FLAG_UPDATE:
        return QuantizedUpdate(payload=payload, bits=overhead_bits(config, antennas))
    if flag == _FLAG_RAW:
        return payload
    raise ValueError(f"unknown feedback record flag {flag}")


# --- end-to-end single-UE loop ------------------------------------------------

class LoopAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class LoopPolicy:
    """Segmentation and protocol knobs for one end-to-end run.

    The trace splits into a training segment, a bootstrap window of
    ``fit_window`` slots (first half fits the transition matrix from
    predicted/reported pairs, second half holds verification probes), and the
    streaming remainder. ``mode`` selects the twin-prediction strategy:
    "csilabs" (transition matrix), "mlabe" (full predictor at both ends) or
    "without_ml" (raw compressed reporting every slot).
    """

    mode: str = "csilabs"
    train_fraction: float = 0.5
    fit_window: int = 256
    suppression_tol: float = 0.0
    verify_threshold: float = 0.05
    max_retrain: int = 2
    clip_factor: float = 4.0
    predictor_kind: str = "linear_ar"
    lags: int = 4
    n_h: int = 16
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30))
    normalize: bool = True
    refresh_interval: int | None = None
    refresh_threshold: float | None = None
    pf_report_bits: int = 8

    def __post_init__(self):
        if self.mode not in ("csilabs", "mlabe", "without_ml"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must be in (0, 1)")
        if self.fit_window < 4:
            raise ValueError("fit_window must be >= 4")
        if self.suppression_tol < 0:
            raise ValueError("suppression_tol must be >= 0")
        if self.max_retrain < 0:
            raise ValueError("max_retrain must be >= 0")


@dataclass
class SingleUeResult:
    """Per-slot stream records plus aggregate metrics for one UE run."""

    truth: np.ndarray
    acquired: np.ndarray
    bits: np.ndarray
    provenance: list
    pf: PredictorFunction | None
    verification: VerificationResult | None
    downlink_bits: int
    retrain_count: int

    @property
    def nmse(self) -> float:
        return nmse_stream(list(self.acquired), list(self.truth))

    @property
    def cosine(self) -> float:
        return cosine_similarity_stream(list(self.acquired), list(self.truth))

    @property
    def precoding_gain(self) -> float:
        return precoding_gain_stream(list(self.acquired), list(self.truth))

    @property
    def mean_bits(self) -> float:
        return float(np.mean(self.bits))

    def records(self):
        """(t, nmse, bits, provenance) rows, one per streamed slot."""
        for t in range(len(self.truth)):
            err = np.sum(np.abs(self.acquired[t] - self.truth[t]) ** 2)
            ref = np.sum(np.abs(self.truth[t]) ** 2)
            yield t, float(err / ref), int(self.bits[t]), self.provenance[t].value


def _train_channel_predictor(samples, policy: LoopPolicy, seed: int):
    windows = window_trace_samples(samples, policy.lags)
    data = TrainData.from_windows(windows)
    model = make_predictor(policy.predictor_kind, policy.lags, 1, 2 * samples.shape[1],
                           n_h=policy.n_h, seed=seed)
    cfg = replace(policy.train, seed=seed)
    train(model, data, cfg)
    return model


def window_trace_samples(samples: np.ndarray, lags: int):
    """Windows over a raw (T, M) sample block (one-step horizon)."""
    return window_trace(ChannelTrace(ue_id=0, samples=samples), d=lags, horizon=1)


def _cp_predict_next(model, history: np.ndarray) -> np.ndarray:
    """One-step prediction from the last ``model.d`` complex snapshots."""
    return predict_channel(model, history[-model.d :])[0]


def run_single_ue_loop(trace: ChannelTrace, bits: int | None,
                       policy: LoopPolicy = LoopPolicy(), seed: int = 0) -> SingleUeResult:
    """Run the full protocol over one trace and return the streamed results.

    The stream NMSE/cosine/precoding metrics compare the per-slot acquired
    channel against the true one; uplink bits are counted per streamed slot
    (the bootstrap window's raw reporting is outside the streamed segment).
    """
    work = normalize_trace(trace) if policy.normalize else trace
    samples = work.samples
    t_total = len(samples)
    n_train = int(t_total * policy.train_fraction)
    fit_len = policy.fit_window
    n_stream = t_total - n_train - fit_len
    if policy.mode != "without_ml" and (n_train <= policy.lags + 2 or n_stream < 1):
        raise ValueError(
            f"trace too short: length {t_total} leaves no stream after "
            f"train={n_train} and fit_window={fit_len}"
        )

    m_ant = work.antennas
    r_channel = calibrate_clip_range(samples[:n_train] if n_train else samples,
                                     policy.clip_factor)
    q_channel = QuantizerConfig(bits=bits, clip_range=r_channel)

    if policy.mode == "without_ml":
        truth = samples
        acquired = np.empty_like(truth)
        bits_used = np.zeros(len(truth))
        provenance = []
        for t in range(len(truth)):
            acq = baseline_without_ml(truth[t], q_channel)
            acquired[t] = acq.vector
            provenance.append(acq.provenance)
            bits_used[t] = 0 if q_channel.is_lossless else overhead_bits(q_channel, m_ant)
        return SingleUeResult(truth=truth, acquired=acquired, bits=bits_used,
                              provenance=provenance, pf=None, verification=None,
                              downlink_bits=0, retrain_count=0)

    fit_start = n_train
    half = fit_len // 2
    probe_start = fit_start + half
    stream_start = fit_start + fit_len

    pf = None
    verification = None
    model = None
    retrain_count = 0
    for attempt in range(policy.max_retrain + 1):
        model = _train_channel_predictor(samples[:n_train], policy, seed=seed + attempt)
        if policy.mode == "mlabe":
            verification = None
            break
        predicted = []
        reported = []
        for ell in range(fit_start, probe_start):
            history = samples[ell - policy.lags : ell]
            predicted.append(_cp_predict_next(model, history))
            reported.append(quantize(samples[ell - 1], q_channel).reconstruct())
        pf = fit_pf(np.asarray(predicted), np.asarray(reported),
                    source_window=f"[{fit_start},{probe_start})")
        probes = [(samples[ell - 1], samples[ell]) for ell in range(probe_start, stream_start)]
        verification = verify_pf(pf, probes, policy.verify_threshold)
        if verification.accepted:
            break
        retrain_count += 1
    else:
        raise LoopAborted(
            f"transition-matrix verification failed after {policy.max_retrain + 1} "
            f"attempts (last mse {verification.mse:.4g} > {policy.verify_threshold})"
        )

    # update codec calibrated on bootstrap prediction residuals
    if policy.mode == "csilabs":
        residuals = np.asarray([pf.matrix @ samples[ell - 1] - samples[ell]
                                for ell in range(probe_start, stream_start)])
    else:
        residuals = np.asarray([_cp_predict_next(model, samples[ell - policy.lags : ell]) - samples[ell]
                                for ell in range(probe_start, stream_start)])
    r_update = calibrate_clip_range(residuals, policy.clip_factor)
    q_update = QuantizerConfig(bits=bits, clip_range=r_update)

    downlink_bits = 0
    if policy.mode == "csilabs":
        downlink_bits = 2 * m_ant * m_ant * policy.pf_report_bits

    # shared state: both ends start from the last bootstrap report
    state = quantize(samples[stream_start - 1], q_channel).reconstruct()
    state_history = [quantize(samples[t], q_channel).reconstruct()
                     for t in range(stream_start - policy.lags, stream_start)]

    truth = samples[stream_start:]
    acquired = np.empty_like(truth)
    bits_used = np.zeros(len(truth))
    provenance = []

    for t in range(len(truth)):
        if policy.mode == "csilabs":
            predicted = predict_with_pf(pf, state)
        else:
            predicted = _cp_predict_next(model, np.asarray(state_history))
        estimate = truth[t]
        update = compute_update(predicted, estimate, policy.suppression_tol)
        message = encode_feedback(update, q_update)
        acq = retrieve_csi(predicted, message)
        acquired[t] = acq.vector
        provenance.append(acq.provenance)
        bits_used[t] = 0 if message.bits is None else message.bits

        state = acq.vector
        state_history.append(acq.vector)
        if len(state_history) > policy.lags:
            state_history.pop(0)

        # optional refresh: refit the matrix from recent acquired transitions
        if (policy.mode == "csilabs" and policy.refresh_interval
                and (t + 1) % policy.refresh_interval == 0):
            recent = acquired[max(0, t + 1 - policy.refresh_interval) : t + 1]
            if len(recent) > 2:
                mse = float(np.mean([np.sum(np.abs(pf.matrix @ recent[i - 1] - recent[i]) ** 2) / m_ant
                                     for i in range(1, len(recent))]))
                limit = (policy.refresh_threshold if policy.refresh_threshold is not None
                         else policy.verify_threshold)
                if mse > limit:
                    pf = fit_pf(recent[1:], recent[:-1], source_window=f"refresh@{t}")
                    downlink_bits += 2 * m_ant * m_ant * policy.pf_report_bits

    return SingleUeResult(truth=truth, acquired=acquired, bits=bits_used,
                          provenance=provenance, pf=pf, verification=verification,
                          downlink_bits=downlink_bits, retrain_count=retrain_count)
