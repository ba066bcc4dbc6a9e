"""Symmetric two's-complement quantization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantTensor:
    values: np.ndarray  # int64, in [-2^(B-1), 2^(B-1) - 1]
    scale: float | np.ndarray  # per tensor, or per leading row (see quantize_rows)
    bits: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        s = np.asarray(self.scale, dtype=np.float64)
        if s.ndim:
            s = s.reshape(s.shape + (1,) * (self.values.ndim - s.ndim))
        return self.values * s


def qmax(bits: int) -> int:
    return 2 ** (bits - 1) - 1


def _check_bits(bits: int) -> None:
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must lie in [2, 8], got {bits}")


def quantize(x, bits: int) -> QuantTensor:
    """Per-tensor symmetric: scale = max|x| / (2^(B-1) - 1), round to nearest."""
    _check_bits(bits)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    m = float(np.max(np.abs(x)))
    scale = m / qmax(bits) if m > 0 else 1.0
    v = np.clip(np.rint(x / scale), -qmax(bits) - 1, qmax(bits)).astype(np.int64)
    return QuantTensor(v, scale, bits)


def quantize_rows(x, bits: int) -> QuantTensor:
    """Symmetric quantization with one scale per row (leading axes), e.g. per token."""
    _check_bits(bits)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    m = np.max(np.abs(x), axis=-1)
    scale = np.where(m > 0, m / qmax(bits), 1.0)
    v = np.clip(np.rint(x / scale[..., None]), -qmax(bits) - 1, qmax(bits)).astype(np.int64)
    return QuantTensor(v, scale, bits)


def quantize_per_sample(x, bits: int) -> QuantTensor:
    """Per-tensor symmetric quantization applied to each sample ``x[i]`` separately."""
    _check_bits(bits)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    m = np.max(np.abs(x.reshape(x.shape[0], -1)), axis=1)
    scale = np.where(m > 0, m / qmax(bits), 1.0)
    v = np.rint(x / scale.reshape((-1,) + (1,) * (x.ndim - 1)))
    v = np.clip(v, -qmax(bits) - 1, qmax(bits)).astype(np.int64)
    return QuantTensor(v, scale, bits)


def twos_complement_planes(values, bits: int) -> np.ndarray:
    """Bit planes of two's-complement integers, shape ``(bits,) + values.shape``, LSB first.

    Plane ``bits - 1`` carries weight ``-2^(bits-1)``; see :func:`plane_weights`.
    """
    v = np.asarray(values, dtype=np.int64)
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    if v.size and (v.min() < lo or v.max() > hi):
        raise ValueError(f"values outside the {bits}-bit two's-complement range")
    u = v & ((1 << bits) - 1)
    return np.stack([(u >> b) & 1 for b in range(bits)]).astype(np.uint8)


def plane_weights(bits: int) -> np.ndarray:
    w = 2.0 ** np.arange(bits)
    w[-1] = -w[-1]
    return w
