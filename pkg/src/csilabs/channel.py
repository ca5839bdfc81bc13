"""Synthetic complex channel traces driven by an autoregressive process.

Each antenna element evolves independently as

    a_t = q + sum_e theta_e * a_{t-e} + eps_t

with circularly-symmetric complex Gaussian innovations eps_t. Traces stand in
for measured channel histories and feed predictor training, transition-matrix
fitting and the feedback simulations. A small versioned binary container is
provided for persistence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChannelTrace",
    "ARTraceConfig",
    "WindowedSample",
    "TraceFormatError",
    "generate_ar_trace",
    "window_trace",
    "normalize_trace",
    "save_trace",
    "load_trace",
    "stack_complex",
    "unstack_complex",
]

_MAGIC = b"CTRC"
_VERSION = 1
_HEADER = struct.Struct("<4sIIqQ")  # magic, version, antennas, ue_id, length


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def as_channel_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D complex128 vector (one channel snapshot)."""
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"channel vector must be 1-D and non-empty, got shape {v.shape}")
    if not np.all(np.isfinite(v.view(np.float64))):
        raise ValueError("channel vector contains non-finite entries")
    return v


@dataclass
class ChannelTrace:
    """Time-indexed channel history for one UE.

    ``samples`` has shape (T, M): row t is the complex channel vector at
    discrete time t. Instances are treated as immutable after creation.
    """

    ue_id: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 2:
            raise ValueError(f"samples must be 2-D (T, M), got shape {s.shape}")
        if s.shape[0] > 0 and s.shape[1] < 1:
            raise ValueError("antenna count must be >= 1")
        if not np.all(np.isfinite(s.view(np.float64))):
            raise ValueError("trace contains non-finite entries")
        self.samples = s

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def antennas(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelTrace):
            return NotImplemented
        return (
            self.ue_id == other.ue_id
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class ARTraceConfig:
    """Generator settings for one synthetic trace.

    ``coefficients`` are the per-lag scalars applied element-wise to every
    antenna; the process must be stable (all characteristic roots strictly
    outside the unit circle). ``burn_in`` of None means 10x the AR order.
    """

    antennas: int
    length: int
    coefficients: tuple = (0.5, 0.3)
    intercept: complex = 0.0
    innovation_stddev: float = 1.0
    seed: int = 0
    burn_in: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(complex(c) for c in self.coefficients))
        if self.antennas < 1:
            raise ValueError("antennas must be >= 1")
        if self.length < 0:
            raise ValueError("length must be >= 0")
        if len(self.coefficients) < 1:
            raise ValueError("AR order must be >= 1")
        if self.innovation_stddev < 0:
            raise ValueError("innovation_stddev must be >= 0")
        roots = _characteristic_roots(self.coefficients)
        bad = [r for r in roots if abs(r) <= 1.0 + 1e-12]
        if bad:
            raise ValueError(
                "unstable AR coefficients: characteristic roots inside or on the "
                f"unit circle: {', '.join(f'{r:.6g}' for r in bad)}"
            )

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def effective_burn_in(self) -> int:
        return 10 * self.order if self.burn_in is None else self.burn_in


def _characteristic_roots(coefficients) -> np.ndarray:
    # roots of 1 - theta_1 z - ... - theta_d z^d, highest degree first
    poly = np.concatenate(([-c for c in coefficients[::-1]], [1.0]))
    return np.roots(poly)


def generate_ar_trace(config: ARTraceConfig, ue_id: int = 0) -> ChannelTrace:
    """Simulate the AR recurrence and return a trace of ``config.length``.

    A zero-initialised warm-up of ``effective_burn_in`` samples is discarded
    so the returned samples are close to stationarity. Deterministic for a
    fixed config (seed included).
    """
    rng = np.random.default_rng(config.seed)
    d = config.order
    total = config.length + config.effective_burn_in
    m = config.antennas
    scale = config.innovation_stddev / np.sqrt(2.0)
    noise = scale * (rng.standard_normal((total, m)) + 1j * rng.standard_normal((total, m)))
    theta = np.asarray(config.coefficients, dtype=np.complex128)

    out = np.zeros((total, m), dtype=np.complex128)
    for t in range(total):
        acc = noise[t] + config.intercept
        for e in range(1, min(d, t) + 1):
            acc = acc + theta[e - 1] * out[t - e]
        out[t] = acc
    return ChannelTrace(ue_id=ue_id, samples=out[config.effective_burn_in :])


def normalize_trace(trace: ChannelTrace) -> ChannelTrace:
    """Rescale so the average element power E|h|^2 is one."""
    power = np.mean(np.abs(trace.samples) ** 2)
    if power <= 0:
        raise ValueError("cannot normalize an all-zero trace")
    return ChannelTrace(ue_id=trace.ue_id, samples=trace.samples / np.sqrt(power))


@dataclass(frozen=True)
class WindowedSample:
    """One supervised sample: ``inputs`` are the ``d`` most recent snapshots
    (oldest first), ``labels`` the next ``D``; ``origin`` is the absolute
    trace index of the first label."""

    inputs: np.ndarray
    labels: np.ndarray
    origin: int = 0


def window_trace(trace: ChannelTrace, d: int | None = None, horizon: int = 1) -> list[WindowedSample]:
    """Slice a trace into all maximal contiguous (inputs, labels) windows.

    When ``d`` is omitted it defaults to twice the prediction horizon.
    Returns ``T - d - horizon + 1`` windows; raises if the trace is shorter
    than ``d + horizon``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if d is None:
        d = 2 * horizon
    if d < 1:
        raise ValueError("lag order d must be >= 1")
    t_len = trace.length
    needed = d + horizon
    if t_len < needed:
        raise ValueError(
            f"trace too short for windowing: length {t_len} < required minimum {needed} (d={d}, horizon={horizon})"
        )
    windows = []
    for start in range(t_len - needed + 1):
        windows.append(
            WindowedSample(
                inputs=trace.samples[start : start + d],
                labels=trace.samples[start + d : start + needed],
                origin=start + d,
            )
        )
    return windows


def stack_complex(samples: np.ndarray) -> np.ndarray:
    """(T, M) complex -> (T, 2M) real features, real parts then imaginary."""
    samples = np.asarray(samples, dtype=np.complex128)
    return np.concatenate([samples.real, samples.imag], axis=-1)


def unstack_complex(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stack_complex`."""
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[-1] // 2
    return features[..., :m] + 1j * features[..., m:]


def save_trace(trace: ChannelTrace, path) -> None:
    """Write the versioned binary container (header + float64 re/im pairs)."""
    header = _HEADER.pack(_MAGIC, _VERSION, trace.antennas, trace.ue_id, trace.length)
    interleaved = np.empty((trace.length, trace.antennas, 2), dtype="<f8")
    interleaved[..., 0] = trace.samples.real
    interleaved[..., 1] = trace.samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def load_trace(path) -> ChannelTrace:
    """Read a trace container; raises :class:`TraceFormatError` on any damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TraceFormatError("truncated header", offset=len(blob))
    magic, version, antennas, ue_id, length = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}", offset=0)
    if version != _VERSION:
        raise TraceFormatError(f"unsupported version {version}", offset=4)
    if antennas < 1 and length > 0:
        raise TraceFormatError(f"invalid antenna count {antennas}", offset=8)
    expected = _HEADER.size + 16 * length * antennas
    if len(blob) != expected:
        raise TraceFormatError(
            f"payload size mismatch: have {len(blob)} bytes, expected {expected}",
            offset=min(len(blob), expected),
        )
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    pairs = flat.reshape(length, antennas, 2)
    samples = (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex128)
    try:
        return ChannelTrace(ue_id=ue_id, samples=samples)
    except ValueError as exc:
        raise TraceFormatError(f"invalid trace payload: {exc}", offset=_HEADER.size) from exc
