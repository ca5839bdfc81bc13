"""Element-wise uniform midrise quantization of complex vectors.

Real and imaginary parts are compressed independently on a symmetric range
[-clip_range, +clip_range] with 2^bits reconstruction levels per component.
``bits=None`` selects the lossless passthrough codec. The same codec serves
raw channel vectors and prediction-error updates; only the clip range is
calibrated to the quantity being compressed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantizerConfig",
    "QuantizedVector",
    "quantize",
    "overhead_bits",
    "calibrate_clip_range",
    "pack_levels",
    "unpack_levels",
]


@dataclass(frozen=True)
class QuantizerConfig:
    """Codec settings: bit depth per real component and symmetric clip range.

    ``bits`` is an integer in 1..32, or None for lossless passthrough.
    """

    bits: int | None
    clip_range: float = 1.0

    def __post_init__(self):
        if self.bits is not None and not (1 <= int(self.bits) <= 32):
            raise ValueError(f"bits must be in 1..32 or None, got {self.bits}")
        if not (self.clip_range > 0):
            raise ValueError(f"clip_range must be positive, got {self.clip_range}")

    @classmethod
    def lossless(cls) -> "QuantizerConfig":
        return cls(bits=None)

    @property
    def is_lossless(self) -> bool:
        return self.bits is None

    @property
    def num_levels(self) -> int:
        if self.bits is None:
            raise ValueError("lossless codec has no finite level count")
        return 1 << self.bits

    @property
    def step(self) -> float:
        return 2.0 * self.clip_range / self.num_levels


@dataclass(frozen=True)
class QuantizedVector:
    """Quantized form of one complex vector.

    For a finite-bit codec, ``levels`` has shape (M, 2) holding the (real,
    imag) level indices per element. For the lossless codec the original
    values are carried through unchanged.
    """

    config: QuantizerConfig
    levels: np.ndarray | None = None
    passthrough: np.ndarray | None = None

    def __post_init__(self):
        if self.config.is_lossless:
            if self.passthrough is None:
                raise ValueError("lossless quantized vector requires passthrough values")
        else:
            if self.levels is None:
                raise ValueError("finite-bit quantized vector requires level indices")
            lv = np.asarray(self.levels)
            if lv.ndim != 2 or lv.shape[1] != 2:
                raise ValueError(f"levels must have shape (M, 2), got {lv.shape}")
            if lv.min(initial=0) < 0 or lv.max(initial=0) >= self.config.num_levels:
                raise ValueError("level index out of range for configured bit depth")

    @property
    def size(self) -> int:
        if self.config.is_lossless:
            return int(self.passthrough.shape[0])
        return int(self.levels.shape[0])

    def reconstruct(self) -> np.ndarray:
        """Decode to a complex vector (exact copy for the lossless codec)."""
        if self.config.is_lossless:
            return np.array(self.passthrough, dtype=np.complex128)
        step = self.config.step
        vals = -self.config.clip_range + (self.levels.astype(np.float64) + 0.5) * step
        return (vals[:, 0] + 1j * vals[:, 1]).astype(np.complex128)


def quantize(vector, config: QuantizerConfig) -> QuantizedVector:
    """Quantize a complex vector component-wise (midrise, clipping extremes)."""
    v = np.asarray(vector, dtype=np.complex128)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v.view(np.float64))):
        raise ValueError("cannot quantize non-finite values")
    if config.is_lossless:
        return QuantizedVector(config=config, passthrough=v.copy())
    comps = np.stack([v.real, v.imag], axis=1)
    idx = np.floor((comps + config.clip_range) / config.step)
    idx = np.clip(idx, 0, config.num_levels - 1).astype(np.int64)
    return QuantizedVector(config=config, levels=idx)


def overhead_bits(config: QuantizerConfig, antennas: int) -> int:
    """Uplink bit cost of one quantized vector: 2 * M * bits."""
    if config.is_lossless:
        raise ValueError("overhead is unbounded for the lossless codec")
    if antennas < 1:
        raise ValueError("antennas must be >= 1")
    return 2 * antennas * int(config.bits)


def calibrate_clip_range(values, factor: float = 4.0) -> float:
    """Clip range as ``factor`` times the RMS of the real/imag components.

    ``values`` is any complex array of representative samples; the range is
    meant to be frozen once per experiment.
    """
    v = np.asarray(values, dtype=np.complex128)
    comps = np.concatenate([v.real.ravel(), v.imag.ravel()])
    rms = float(np.sqrt(np.mean(comps**2))) if comps.size else 0.0
    if rms <= 0:
        rms = 1e-12
    return factor * rms


def pack_levels(qv: QuantizedVector) -> bytes:
    """Pack level indices into a little-endian bitfield (real, imag per element)."""
    if qv.config.is_lossless:
        raise ValueError("lossless vectors have no packed representation")
    bits = int(qv.config.bits)
    acc = 0
    pos = 0
    for value in qv.levels.ravel(order="C"):
        acc |= int(value) << pos
        pos += bits
    return acc.to_bytes((pos + 7) // 8 or 1, "little")


def unpack_levels(blob: bytes, antennas: int, config: QuantizerConfig) -> QuantizedVector:
    """Inverse of :func:`pack_levels` for a vector of known length."""
    if config.is_lossless:
        raise ValueError("lossless vectors have no packed representation")
    bits = int(config.bits)
    total = 2 * antennas
    needed = (total * bits + 7) // 8
    if len(blob) < needed:
        raise ValueError(f"packed payload too short: {len(blob)} bytes, need {needed}")
    acc = int.from_bytes(blob, "little")
    mask = (1 << bits) - 1
    flat = np.empty(total, dtype=np.int64)
    for i in range(total):
        flat[i] = (acc >> (i * bits)) & mask
    return QuantizedVector(config=config, levels=flat.reshape(antennas, 2))
