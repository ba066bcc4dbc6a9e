"""Signed multi-bit matmul on the 1b x 1b macro.

Inputs are applied bit-serially and weights are stored bit-sliced, both in
two's complement (top plane/slice weighted negatively). Each (input plane,
weight slice, row tile) partial MAC is one conversion; the digital side sums
``+-2^(b+s) * code``. A tile shorter than 1023 rows is repeated ``r`` times
down the column so the partial sum uses ``r`` times more of the ADC range; the
code is divided by ``r`` afterwards, which is exact when noiseless.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from ..adc import ConversionConfig, NoiseModel, convert
from ..array import DEFAULT_COLS, N_ACTIVE, UNIT_ROWS, ArrayModel, build_array, effective_bit_weights_all, load_weights
from ..streams import substream
from .quant import QuantTensor, plane_weights, twos_complement_planes

CHUNK_CONVERSIONS = 1 << 20


@dataclass(frozen=True)
class CimLinearLayout:
    rows: int
    cols: int
    weight_bits: int
    tiles: tuple[tuple[int, int], ...]  # [start, stop) row ranges
    replication: tuple[int, ...]  # per tile
    slices: np.ndarray  # (weight_bits, rows, cols) uint8, LSB slice first
    significance: np.ndarray  # (weight_bits,) +-2^s

    @property
    def phys_cols(self) -> int:
        """Physical columns per tile: one per (slice, output)."""
        return self.weight_bits * self.cols

    def reassemble(self) -> np.ndarray:
        return np.tensordot(self.significance, self.slices.astype(np.int64), axes=1).astype(np.int64)


def plan_tiles(rows: int) -> tuple[tuple[int, int], ...]:
    """Split ``rows`` into the fewest near-equal tiles of at most 1023 rows."""
    n = math.ceil(rows / N_ACTIVE)
    edges = np.linspace(0, rows, n + 1).round().astype(int)
    return tuple((int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))


def build_layout(w: QuantTensor, replicate: bool = True) -> CimLinearLayout:
    """``w.values`` is ``(rows, cols)``: inner dimension first."""
    if w.values.ndim != 2:
        raise ValueError("weight tensor must be 2-D (rows x cols)")
    rows, cols = w.values.shape
    tiles = plan_tiles(rows)
    rep = tuple(max(1, N_ACTIVE // (b - a)) if replicate else 1 for a, b in tiles)
    slices = twos_complement_planes(w.values, w.bits)
    return CimLinearLayout(rows, cols, w.bits, tiles, rep, slices, plane_weights(w.bits).astype(np.int64))


class ArrayPool:
    """Hands out 1024 x 78 macros, one fixed mismatch realization per (layer, tile, group)."""

    def __init__(self, mismatch_sigma: float = 0.0, seed: int = 0, cols: int = DEFAULT_COLS):
        self.mismatch_sigma = float(mismatch_sigma)
        self.seed = int(seed)
        self.cols = cols
        self._ideal = build_array(UNIT_ROWS, cols) if mismatch_sigma == 0 else None

    def get(self, layer: str, tile: int, group: int) -> ArrayModel:
        if self._ideal is not None:
            return self._ideal
        key = zlib.crc32(f"{layer}/{tile}/{group}".encode())
        s = int(substream(self.seed, "pool", key).integers(2**63))
        return build_array(UNIT_ROWS, self.cols, self.mismatch_sigma, s)


@dataclass
class _TileMap:
    start: int
    stop: int
    rep: int
    g: np.ndarray  # (tile_rows, phys_cols): charge contribution of each input row per column
    bitw: np.ndarray  # (phys_cols, 10)


class CimLinear:
    """A weight matrix programmed into macros, ready for repeated products."""

    def __init__(self, name: str, w: QuantTensor, pool: ArrayPool, replicate: bool = True):
        self.name = name
        self.w = w
        self.layout = build_layout(w, replicate)
        self.tiles = [self._program(t, pool) for t in range(len(self.layout.tiles))]

    def _program(self, t: int, pool: ArrayPool) -> _TileMap:
        lay = self.layout
        a, b = lay.tiles[t]
        n, r = b - a, lay.replication[t]
        # (tile_rows, phys_cols) with physical column index s * cols + j
        bits = lay.slices[:, a:b, :].transpose(1, 0, 2).reshape(n, lay.phys_cols)
        g = np.empty((n, lay.phys_cols))
        bitw = np.empty((lay.phys_cols, 10))
        for grp, c0 in enumerate(range(0, lay.phys_cols, pool.cols)):
            c1 = min(c0 + pool.cols, lay.phys_cols)
            full = np.zeros((UNIT_ROWS, pool.cols), dtype=np.uint8)
            full[:n * r, :c1 - c0] = np.tile(bits[:, c0:c1], (r, 1))
            arr = load_weights(pool.get(self.name, t, grp), full)
            contrib = arr.weight_bits[:N_ACTIVE] * arr.cap[:N_ACTIVE] / arr.total_cap()
            g[:, c0:c1] = contrib[:n * r].reshape(r, n, pool.cols).sum(axis=0)[:, :c1 - c0]
            bitw[c0:c1] = effective_bit_weights_all(arr)[:c1 - c0]
        return _TileMap(a, b, r, g, bitw)

    def __call__(self, x: QuantTensor, cfg: ConversionConfig, noise: NoiseModel, seed: int = 0,
                 sampler: str = "decision") -> np.ndarray:
        """Accumulated outputs ``(n, cols)`` in integer-product units (dequantize with x.scale * w.scale)."""
        xv = np.atleast_2d(x.values)
        if xv.shape[-1] != self.layout.rows:
            raise ValueError(f"inner dimension mismatch: input {xv.shape[-1]} vs weights {self.layout.rows}")
        lay = self.layout
        planes = twos_complement_planes(xv, x.bits)  # (ib, n, rows)
        pw = plane_weights(x.bits)
        sig = np.outer(pw, lay.significance.astype(np.float64))  # (ib, wb)
        n = xv.shape[0]
        out = np.zeros((n, lay.cols))
        per_vec = x.bits * lay.phys_cols
        step = max(1, CHUNK_CONVERSIONS // per_vec)
        cols_idx = np.broadcast_to(np.arange(lay.phys_cols), (x.bits, lay.phys_cols))
        for t, tm in enumerate(self.tiles):
            for ci, s in enumerate(range(0, n, step)):
                e = min(s + step, n)
                p = planes[:, s:e, tm.start:tm.stop].astype(np.float64)
                vals = np.einsum("bnr,rc->nbc", p, tm.g)  # (m, ib, phys_cols)
                rng = substream(seed, self.name, t, ci)
                codes = convert(vals, tm.bitw, cfg, noise, rng,
                                cols=np.broadcast_to(cols_idx, vals.shape), dtype=np.float32, sampler=sampler)
                part = codes.reshape(e - s, x.bits, lay.weight_bits, lay.cols) / tm.rep
                out[s:e] += np.einsum("nbsc,bs->nc", part, sig)
        return out


def cim_linear(x: QuantTensor, w: QuantTensor, plan, pool: ArrayPool, noise: NoiseModel, seed: int = 0,
               name: str = "linear", cfg: ConversionConfig | None = None, replicate: bool = True):
    """One-shot signed matmul ``x @ w`` through the macro; returns ``(outputs, scale)``."""
    if plan is not None and (plan.input_bits != x.bits or plan.weight_bits != w.bits):
        raise ValueError(f"plan bits ({plan.input_bits}, {plan.weight_bits}) do not match tensors "
                         f"({x.bits}, {w.bits})")
    cfg = (cfg or ConversionConfig()).with_cb(bool(plan.cb_enabled) if plan is not None else False)
    layer = CimLinear(name, w, pool, replicate)
    scale = np.asarray(x.scale, dtype=np.float64) * w.scale
    return layer(x, cfg, noise, seed), scale
