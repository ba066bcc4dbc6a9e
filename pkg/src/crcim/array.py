"""Column capacitor array: charge-domain 1b x 1b MAC and binary C-DAC.

Each column has 1024 unit cells. Rows 0..1022 are active and are grouped into
the binary DAC segments (512, 256, ..., 1 cells, MSB first); row 1023 is a
dummy. The same per-cell capacitance realization drives both the MAC and the
DAC, so removing mismatch makes both ideal at once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .streams import substream

N_BITS = 10
N_ACTIVE = 2**N_BITS - 1  # 1023 active cells per conversion unit
UNIT_ROWS = N_ACTIVE + 1  # plus one dummy
LSB = 1.0 / N_ACTIVE
DEFAULT_COLS = 78


class GeometryError(ValueError):
    pass


def _group_bounds() -> list[tuple[int, int, int]]:
    """(bit, start_row, stop_row) for bits 9..0 in row-index order."""
    out = []
    for j in range(N_BITS - 1, -1, -1):
        out.append((j, UNIT_ROWS - 2 ** (j + 1), UNIT_ROWS - 2**j))
    return out


DAC_GROUPS = _group_bounds()


def dac_group_of_rows() -> np.ndarray:
    """Bit index owning each of the 1023 active rows."""
    owner = np.empty(N_ACTIVE, dtype=np.int64)
    for j, start, stop in DAC_GROUPS:
        owner[start:stop] = j
    return owner


@dataclass(frozen=True, eq=False)
class ArrayModel:
    """One macro: ``rows x cols`` cells with a fixed mismatch realization.

    Only the first 1024 rows form the conversion unit; rows beyond that (the
    prototype has 1088) are carried but never switched.
    """

    rows: int
    cols: int
    cap_mismatch: np.ndarray  # (rows, cols) relative deviation of each cell
    weight_bits: np.ndarray  # (rows, cols) uint8
    mismatch_sigma: float
    seed: int
    cap: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cap = 1.0 + self.cap_mismatch
        for a in (self.cap_mismatch, self.weight_bits, cap):
            a.setflags(write=False)
        object.__setattr__(self, "cap", cap)

    @property
    def dac_groups(self) -> dict[int, range]:
        return {j: range(start, stop) for j, start, stop in DAC_GROUPS}

    def total_cap(self) -> np.ndarray:
        """Active-cell capacitance per column, the shared charge-share denominator."""
        return self.cap[:N_ACTIVE].sum(axis=0)


@dataclass(frozen=True)
class AnalogSample:
    """Top-plate signal in full-scale units (ideal range [0, 1])."""

    value: float
    lsb: float = LSB


def build_array(rows: int = UNIT_ROWS, cols: int = DEFAULT_COLS, mismatch_sigma: float = 0.0,
                seed: int = 0) -> ArrayModel:
    if rows < UNIT_ROWS:
        raise GeometryError(f"need at least {UNIT_ROWS} rows for a 10-bit binary DAC plus dummy, got {rows}")
    if cols < 1:
        raise GeometryError("need at least one column")
    if mismatch_sigma < 0:
        raise ValueError("mismatch_sigma must be >= 0")
    if mismatch_sigma == 0:
        eps = np.zeros((rows, cols))
    else:
        eps = mismatch_sigma * substream(seed, "array-mismatch").standard_normal((rows, cols))
    bits = np.zeros((rows, cols), dtype=np.uint8)
    return ArrayModel(rows, cols, eps, bits, float(mismatch_sigma), int(seed))


def load_weights(array: ArrayModel, bits) -> ArrayModel:
    """Return a copy of ``array`` holding ``bits``; the mismatch is untouched.

    ``bits`` may cover all rows or just the 1023 active rows. Dummy and spare
    rows are forced to zero.
    """
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[:, None]
    if bits.shape[1] != array.cols or bits.shape[0] not in (N_ACTIVE, UNIT_ROWS, array.rows):
        raise GeometryError(f"weight matrix shape {bits.shape} does not fit a {array.rows}x{array.cols} array")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("weight bits must be 0 or 1")
    full = np.zeros((array.rows, array.cols), dtype=np.uint8)
    full[:N_ACTIVE] = bits[:N_ACTIVE]
    return replace(array, weight_bits=full)


def load_weights_csv(array: ArrayModel, path) -> ArrayModel:
    """Load a headerless comma-separated 0/1 matrix (rows x cols)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[int(v) for v in line] for line in csv.reader(fh) if line]
    return load_weights(array, np.array(rows, dtype=np.int64))


def save_weights_csv(array: ArrayModel, path) -> Path:
    path = Path(path)
    np.savetxt(path, array.weight_bits, fmt="%d", delimiter=",")
    return path


def _as_input(input_bits) -> np.ndarray:
    x = np.asarray(input_bits)
    if x.shape[-1] != N_ACTIVE:
        raise ValueError(f"input vector must have {N_ACTIVE} entries (dummy excluded), got {x.shape[-1]}")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("input bits must be 0 or 1")
    return x


def compute_mac(array: ArrayModel, col: int, input_bits) -> AnalogSample:
    """Charge share of the active products in one column."""
    if not 0 <= col < array.cols:
        raise IndexError(f"column {col} out of range")
    x = _as_input(input_bits).astype(bool)
    cap = array.cap[:N_ACTIVE, col]
    on = x & (array.weight_bits[:N_ACTIVE, col] == 1)
    return AnalogSample(float(cap[on].sum() / cap.sum()))


def compute_mac_batch(array: ArrayModel, input_bits) -> np.ndarray:
    """Vectorized :func:`compute_mac` over a batch and all columns.

    ``input_bits`` has shape ``(n, 1023)``; returns values of shape ``(n, cols)``.
    """
    x = _as_input(input_bits)
    g = array.weight_bits[:N_ACTIVE] * array.cap[:N_ACTIVE]
    return (np.atleast_2d(x).astype(np.float64) @ g) / array.total_cap()


def compute_mac_products(array: ArrayModel, products, cols) -> np.ndarray:
    """Charge share of precomputed 1b x 1b products, one column per row of ``products``.

    ``products`` is ``(n, 1023)`` of 0/1 (input AND weight already applied);
    ``cols`` gives the column that hosts each row. Used by ensemble metrics,
    where every trial carries its own weight vector.
    """
    p = np.atleast_2d(np.asarray(products))
    if p.shape[-1] != N_ACTIVE:
        raise ValueError(f"products must have {N_ACTIVE} entries per row, got {p.shape[-1]}")
    cols = np.broadcast_to(np.asarray(cols, dtype=np.int64), (p.shape[0],))
    cap = array.cap[:N_ACTIVE]
    if array.mismatch_sigma == 0 and not array.cap_mismatch.any():
        return p.sum(axis=1) / N_ACTIVE
    num = np.einsum("ij,ji->i", p.astype(np.float64), cap[:, cols])
    return num / array.total_cap()[cols]


def ideal_mac(input_bits, weight_bits_col) -> int:
    x = np.asarray(input_bits)
    w = np.asarray(weight_bits_col)
    if x.shape != w.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {w.shape}")
    return int(np.sum(x.astype(np.int64) * w.astype(np.int64)))


def effective_bit_weights(array: ArrayModel, col: int) -> np.ndarray:
    """DAC weights W_9..W_0 (MSB first) as fractions of the active capacitance."""
    return effective_bit_weights_all(array)[col]


def effective_bit_weights_all(array: ArrayModel) -> np.ndarray:
    """Bit weights for every column, shape ``(cols, 10)``, MSB first."""
    cap = array.cap[:N_ACTIVE]
    total = cap.sum(axis=0)
    w = np.stack([cap[start:stop].sum(axis=0) for _, start, stop in DAC_GROUPS], axis=1)
    return w / total[:, None]
