"""Evaluation functionals for acquired and predicted channels.

All three metrics accept an (M, K) complex matrix whose columns are per-UE
channel vectors; 1-D inputs are treated as single columns. Stream variants
average the per-sample values over time.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "nmse",
    "cosine_similarity",
    "precoding_gain",
    "nmse_stream",
    "cosine_similarity_stream",
    "precoding_gain_stream",
]


def _as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.complex128)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"expected a vector or matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise ValueError("metric input contains non-finite entries")
    return m


def nmse(estimate, truth) -> float:
    """Squared-Frobenius error of the estimate normalized by the truth."""
    est = _as_matrix(estimate)
    ref = _as_matrix(truth)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref) ** 2
    if denom == 0:
        raise ValueError("nmse undefined for zero-norm truth")
    return float(np.linalg.norm(est - ref) ** 2 / denom)


def cosine_similarity(estimate, truth) -> float:
    """Mean over columns of |<estimate_k, truth_k>| / (|estimate_k| |truth_k|)."""
    est = _as_matrix(estimate)
    ref = _as_matrix(truth)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    est_norm = np.linalg.norm(est, axis=0)
    ref_norm = np.linalg.norm(ref, axis=0)
    if np.any(est_norm == 0) or np.any(ref_norm == 0):
        raise ValueError("cosine similarity undefined for zero-norm columns")
    inner = np.abs(np.sum(np.conj(est) * ref, axis=0))
    return float(np.mean(inner / (est_norm * ref_norm)))


def precoding_gain(acquired, truth) -> float:
    """Squared Frobenius norm of the Frobenius-normalized equivalent channel.

    The equivalent channel is (acquired / |acquired|_F)^H (truth / |truth|_F);
    the value is invariant to rescaling either argument.
    """
    acq = _as_matrix(acquired)
    ref = _as_matrix(truth)
    if acq.shape != ref.shape:
        raise ValueError(f"shape mismatch: {acq.shape} vs {ref.shape}")
    acq_norm = np.linalg.norm(acq)
    ref_norm = np.linalg.norm(ref)
    if acq_norm == 0 or ref_norm == 0:
        raise ValueError("precoding gain undefined for zero-norm inputs")
    h_eq = (acq / acq_norm).conj().T @ (ref / ref_norm)
    return float(np.linalg.norm(h_eq) ** 2)


def _stream(metric, estimates, truths) -> float:
    vals = [metric(e, t) for e, t in zip(estimates, truths, strict=True)]
    if not vals:
        raise ValueError("empty stream: metric undefined")
    return float(np.mean(vals))


def nmse_stream(estimates, truths) -> float:
    """Mean of per-sample NMSE ratios over a time stream."""
    return _stream(nmse, estimates, truths)


def cosine_similarity_stream(estimates, truths) -> float:
    return _stream(cosine_similarity, estimates, truths)


def precoding_gain_stream(estimates, truths) -> float:
    return _stream(precoding_gain, estimates, truths)
