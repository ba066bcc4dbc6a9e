"""10-bit SAR readout through the reconfigured capacitor array.

The reference path (:func:`sar_convert`) runs one conversion decision by
decision through :func:`compare` and :func:`majority_vote` and keeps a log.
:func:`convert` does the same arithmetic in bulk through the kernel; for the
same noise draws both give the same code.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .array import LSB, N_ACTIVE, N_BITS, AnalogSample, ArrayModel, effective_bit_weights_all
from .kernels import GUARD_LSB, sar_batch, sar_batch_decision

SAMPLERS = ("comparator", "decision")


@dataclass(frozen=True)
class ConversionConfig:
    """ADC operating mode.

    ``offset_lsb`` shifts every decision threshold down by that many LSB. The
    default 0.5 centers each integer MAC level inside its code (mid-tread);
    0 gives the plain truncating search.
    """

    resolution: int = N_BITS
    cb_enabled: bool = False
    mv_repeats: int = 6
    mv_bits: int = 3
    offset_lsb: float = 0.5

    def __post_init__(self):
        if self.resolution != N_BITS:
            raise ValueError("only 10-bit conversion is modeled")
        if not 0 <= self.mv_bits <= self.resolution:
            raise ValueError("mv_bits must lie in [0, resolution]")
        if self.mv_repeats < 1:
            raise ValueError("mv_repeats must be >= 1")

    @property
    def n_unvoted(self) -> int:
        return self.resolution - self.mv_bits if self.cb_enabled else self.resolution

    @property
    def comparisons(self) -> int:
        if not self.cb_enabled:
            return self.resolution
        return (self.resolution - self.mv_bits) + self.mv_bits * self.mv_repeats

    @property
    def repeats(self) -> int:
        return self.mv_repeats if self.cb_enabled else 1

    def with_cb(self, enabled: bool) -> "ConversionConfig":
        return ConversionConfig(self.resolution, enabled, self.mv_repeats, self.mv_bits, self.offset_lsb)


CB_OFF = ConversionConfig(cb_enabled=False)
CB_ON = ConversionConfig(cb_enabled=True)


@dataclass(frozen=True)
class NoiseModel:
    """Comparator noise (LSB rms) and capacitor mismatch (relative rms)."""

    comparator_sigma: float = 0.0
    mismatch_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.comparator_sigma < 0 or self.mismatch_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class Decision:
    bit: int
    residual_lsb: float
    votes: tuple[int, ...]
    decision: int


@dataclass(frozen=True)
class ConversionResult:
    code: int
    comparisons_used: int
    decisions: tuple[Decision, ...] = field(default=())
    clipped: bool = False


def compare(residual: float, noise: NoiseModel, rng: np.random.Generator) -> int:
    """One comparator decision on a residual in full-scale units."""
    n = rng.standard_normal()
    return int(residual * N_ACTIVE + noise.comparator_sigma * n >= -GUARD_LSB)


def majority_vote(decisions: Sequence[int]) -> int:
    """Majority of the decisions; an exact tie goes to the last one."""
    if len(decisions) == 0:
        raise ValueError("majority_vote needs at least one decision")
    ones = sum(int(d) for d in decisions)
    if 2 * ones > len(decisions):
        return 1
    if 2 * ones < len(decisions):
        return 0
    return int(decisions[-1])


def ideal_quantize(value: float, offset_lsb: float = 0.5) -> int:
    """Noise-free code: the largest level whose threshold the value reaches."""
    code = math.floor(value * N_ACTIVE + offset_lsb + GUARD_LSB)
    return int(min(max(code, 0), N_ACTIVE))


def ideal_quantize_array(values, offset_lsb: float = 0.5) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.floor(v * N_ACTIVE + offset_lsb + GUARD_LSB), 0, N_ACTIVE).astype(np.int64)


def _sample_value(sample) -> float:
    return sample.value if isinstance(sample, AnalogSample) else float(sample)


def sar_convert(sample, array: ArrayModel, col: int, cfg: ConversionConfig, noise: NoiseModel,
                rng: np.random.Generator) -> ConversionResult:
    """Binary search from bit 9 to bit 0 against the column's own DAC weights."""
    v = _sample_value(sample)
    clipped = not 0.0 <= v <= 1.0
    v = min(max(v, 0.0), 1.0)
    weights = effective_bit_weights_all(array)[col]
    level = 0.0
    code = 0
    used = 0
    log = []
    for pos in range(N_BITS):
        j = N_BITS - 1 - pos
        trial = level + weights[pos]
        residual = v - trial + cfg.offset_lsb / N_ACTIVE
        if pos < cfg.n_unvoted:
            votes = (compare(residual, noise, rng),)
        else:
            votes = tuple(compare(residual, noise, rng) for _ in range(cfg.mv_repeats))
        used += len(votes)
        d = majority_vote(votes)
        log.append(Decision(j, residual * N_ACTIVE, votes, d))
        if d:
            level = trial
            code |= 1 << j
    return ConversionResult(code, used, tuple(log), clipped)


def draw_noise(rng: np.random.Generator, n: int, cfg: ConversionConfig, noise: NoiseModel,
               dtype=np.float64) -> np.ndarray:
    shape = (n, cfg.comparisons)
    if noise.comparator_sigma == 0:
        return np.zeros(shape, dtype=dtype)
    return rng.standard_normal(shape, dtype=dtype)


def convert(values, bit_weights, cfg: ConversionConfig, noise: NoiseModel, rng: np.random.Generator,
            cols=None, dtype=np.float64, backend: str | None = None,
            sampler: str = "comparator") -> np.ndarray:
    """Bulk conversion of full-scale values.

    ``bit_weights`` is ``(cols, 10)`` (e.g. from :func:`effective_bit_weights_all`)
    or a single length-10 vector; ``cols`` selects the column per value.
    Out-of-range values are clipped, as the rails would.

    ``sampler="comparator"`` draws every comparison explicitly. ``"decision"``
    draws one uniform per bit decision against the exact probability of the
    (voted) outcome: same code distribution, far fewer random numbers.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), 0.0, 1.0)
    bw = np.atleast_2d(np.asarray(bit_weights, dtype=np.float64))
    if cols is None:
        if bw.shape[0] != 1:
            raise ValueError("cols is required when several columns are given")
        col_idx = np.zeros(v.size, dtype=np.int64)
    else:
        col_idx = np.broadcast_to(np.asarray(cols, dtype=np.int64), np.shape(values)).ravel()
    if sampler == "decision":
        u = rng.random((v.size, N_BITS), dtype=dtype) if noise.comparator_sigma > 0 else np.zeros((v.size, N_BITS))
        codes = sar_batch_decision(v, col_idx, bw, u, noise.comparator_sigma, cfg.offset_lsb, cfg.n_unvoted,
                                   cfg.repeats, backend=backend)
        return codes.reshape(np.shape(values))
    nz = draw_noise(rng, v.size, cfg, noise, dtype)
    codes = sar_batch(v, col_idx, bw, nz, noise.comparator_sigma, cfg.offset_lsb, cfg.n_unvoted,
                      cfg.repeats, backend=backend)
    return codes.reshape(np.shape(values))


def nominal_bit_weights() -> np.ndarray:
    return (2.0 ** np.arange(N_BITS - 1, -1, -1) / N_ACTIVE)[None, :]


def write_decision_log(results: Sequence[ConversionResult], path) -> Path:
    """CSV with one row per decision: conversion, bit, residual, votes, decision."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["conversion", "bit", "residual_lsb", "votes", "decision", "code"])
        for i, res in enumerate(results):
            for d in res.decisions:
                w.writerow([i, d.bit, f"{d.residual_lsb:.6f}", "".join(map(str, d.votes)), d.decision, res.code])
    return path
