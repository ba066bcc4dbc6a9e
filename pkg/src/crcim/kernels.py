"""Hot loops: batch successive-approximation conversion.

The numba kernel and the numpy fallback share one contract and consume the same
pre-drawn standard-normal noise matrix, so they return identical codes. Noise
column layout per conversion: one column per unvoted decision (MSB first),
followed by ``repeats`` columns for each voted decision.
"""
from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit

N_BITS = 10
FS_CODES = 1023.0
# numerical guard on the comparator threshold, in LSB; keeps exact charge
# levels from flipping on float round-off in the truncating (offset 0) mode
GUARD_LSB = 1e-9
# |residual| / (sigma * sqrt 2) beyond which a decision is certain in float64
SURE_Z = 6.5


@njit(cache=True)
def _sar_numba(values, col_idx, bitw, noise, sigma, offset_fs, n_unvoted, repeats):
    n = values.shape[0]
    codes = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = values[i]
        c = col_idx[i]
        t = 0.0
        code = 0
        k = 0
        for pos in range(N_BITS):
            j = N_BITS - 1 - pos
            tp = t + bitw[c, pos]
            r = (v - tp + offset_fs) * FS_CODES
            if pos < n_unvoted:
                d = 1 if r + sigma * noise[i, k] >= -GUARD_LSB else 0
                k += 1
            else:
                ones = 0
                last = 0
                for _ in range(repeats):
                    last = 1 if r + sigma * noise[i, k] >= -GUARD_LSB else 0
                    ones += last
                    k += 1
                if 2 * ones > repeats:
                    d = 1
                elif 2 * ones < repeats:
                    d = 0
                else:
                    d = last
            if d == 1:
                t = tp
                code += 1 << j
        codes[i] = code
    return codes


def _sar_numpy(values, col_idx, bitw, noise, sigma, offset_fs, n_unvoted, repeats):
    n = values.shape[0]
    t = np.zeros(n)
    codes = np.zeros(n, dtype=np.int64)
    k = 0
    for pos in range(N_BITS):
        j = N_BITS - 1 - pos
        tp = t + bitw[col_idx, pos]
        r = (values - tp + offset_fs) * FS_CODES
        if pos < n_unvoted:
            d = r + sigma * noise[:, k] >= -GUARD_LSB
            k += 1
        else:
            votes = (r[:, None] + sigma * noise[:, k:k + repeats]) >= -GUARD_LSB
            k += repeats
            ones = votes.sum(axis=1)
            d = np.where(2 * ones > repeats, True, np.where(2 * ones < repeats, False, votes[:, -1]))
        t = np.where(d, tp, t)
        codes += d.astype(np.int64) << j
    return codes


def sar_batch(values, col_idx, bitw, noise, sigma, offset_lsb, n_unvoted, repeats,
              backend: str | None = None) -> np.ndarray:
    """Convert ``values`` (full-scale units, already clipped to [0, 1]).

    ``bitw`` is ``(cols, 10)`` MSB first; ``col_idx`` picks a row of it per value;
    ``noise`` is ``(n, n_unvoted + (10 - n_unvoted) * repeats)``. ``backend``
    overrides the environment choice with ``"numba"`` or ``"numpy"``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
    bitw = np.ascontiguousarray(bitw, dtype=np.float64)
    noise = np.ascontiguousarray(noise)
    need = n_unvoted + (N_BITS - n_unvoted) * repeats
    if noise.shape != (values.shape[0], need):
        raise ValueError(f"noise must have shape {(values.shape[0], need)}, got {noise.shape}")
    if backend is None:
        backend = _accel.backend()
    if backend == "numba":
        if not _accel.HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        fn = _sar_numba
    elif backend == "numpy":
        fn = _sar_numpy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return fn(values, col_idx, bitw, noise, float(sigma), float(offset_lsb) / FS_CODES, int(n_unvoted), int(repeats))


# -- decision-probability sampler -------------------------------------------
#
# Same law as the comparator path, one uniform per decision: P(d=1) is Phi of the
# normalized residual, pushed through the majority rule for voted decisions
# (an exact tie resolves to the last comparison, which is 1 w.p. 1/2 given the tie).

def vote_pmf_coeffs(repeats: int) -> np.ndarray:
    """Binomial coefficients C(repeats, c), c = 0..repeats."""
    out = np.empty(repeats + 1)
    c = 1.0
    for k in range(repeats + 1):
        out[k] = c
        c = c * (repeats - k) / (k + 1)
    return out


@njit(cache=True)
def _p_majority(p, repeats, coeffs):
    # sum of the binomial pmf over winning vote counts (half weight on a tie),
    # pmf built by the ratio recurrence to stay allocation free
    if p >= 1.0:
        return 1.0
    if p <= 0.0:
        return 0.0
    q = 1.0 - p
    ratio = p / q
    pmf = q**repeats
    acc = 0.0
    for c in range(repeats + 1):
        if 2 * c > repeats:
            acc += pmf
        elif 2 * c == repeats:
            acc += 0.5 * pmf
        pmf *= ratio * (repeats - c) / (c + 1)
    return acc


@njit(cache=True)
def _sar_decision_numba(values, col_idx, bitw, uniforms, sigma, offset_fs, n_unvoted, repeats, coeffs):
    n = values.shape[0]
    codes = np.empty(n, dtype=np.int64)
    inv = 1.0 / (sigma * math.sqrt(2.0)) if sigma > 0 else 0.0
    for i in range(n):
        v = values[i]
        c = col_idx[i]
        t = 0.0
        code = 0
        for pos in range(N_BITS):
            j = N_BITS - 1 - pos
            tp = t + bitw[c, pos]
            r = (v - tp + offset_fs) * FS_CODES + GUARD_LSB
            z = r * inv
            if sigma == 0.0 or z > SURE_Z:
                d = r >= 0.0
            elif z < -SURE_Z:
                d = False
            else:
                p = 0.5 * math.erfc(-z)
                if pos >= n_unvoted and repeats > 1:
                    p = _p_majority(p, repeats, coeffs)
                d = uniforms[i, pos] < p
            if d:
                t = tp
                code += 1 << j
        codes[i] = code
    return codes


def _sar_decision_numpy(values, col_idx, bitw, uniforms, sigma, offset_fs, n_unvoted, repeats, coeffs):
    from scipy.special import ndtr

    n = values.shape[0]
    t = np.zeros(n)
    codes = np.zeros(n, dtype=np.int64)
    for pos in range(N_BITS):
        j = N_BITS - 1 - pos
        tp = t + bitw[col_idx, pos]
        r = (values - tp + offset_fs) * FS_CODES + GUARD_LSB
        if sigma > 0:
            p = ndtr(r / sigma)
            if pos >= n_unvoted and repeats > 1:
                cs = np.arange(repeats + 1)
                w = coeffs * p[:, None] ** cs * (1.0 - p[:, None]) ** (repeats - cs)
                keep = np.where(2 * cs > repeats, 1.0, np.where(2 * cs == repeats, 0.5, 0.0))
                p = w @ keep
            d = uniforms[:, pos] < p
        else:
            d = r >= 0.0
        t = np.where(d, tp, t)
        codes += d.astype(np.int64) << j
    return codes


def sar_batch_decision(values, col_idx, bitw, uniforms, sigma, offset_lsb, n_unvoted, repeats,
                       backend: str | None = None) -> np.ndarray:
    """Like :func:`sar_batch` but driven by ``uniforms`` of shape ``(n, 10)``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
    bitw = np.ascontiguousarray(bitw, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms)
    if uniforms.shape != (values.shape[0], N_BITS):
        raise ValueError(f"uniforms must have shape {(values.shape[0], N_BITS)}, got {uniforms.shape}")
    backend = backend or _accel.backend()
    if backend == "numba":
        if not _accel.HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        fn = _sar_decision_numba
    elif backend == "numpy":
        fn = _sar_decision_numpy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return fn(values, col_idx, bitw, uniforms, float(sigma), float(offset_lsb) / FS_CODES,
              int(n_unvoted), int(repeats), vote_pmf_coeffs(int(repeats)))
