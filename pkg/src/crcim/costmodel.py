"""Energy, latency and area bookkeeping for the macro.

Conversion energy splits linearly into a comparator share ``f`` that scales
with the number of comparisons and a fixed remainder (DAC switching, logic).
One MAC counts as 2 operations at whatever precision the layer runs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .adc import CB_OFF, ConversionConfig
from .array import DEFAULT_COLS, N_ACTIVE

OPS_PER_MAC = 2
BASELINE_TOPS_W = 818.0
# charge-domain swing ratio: the reconfigured array keeps the full MAC charge,
# a separate equal-size DAC would share it and halve the swing
CONVENTIONAL_ATTENUATION = 0.5
ARCHITECTURES = ("cr", "conventional")


@dataclass(frozen=True)
class CostParams:
    comparator_fraction: float = 0.6
    e_conv_base: float = 1.0  # per CB-off conversion, arbitrary units
    e_mac_cell: float = 1e-4  # per 1b x 1b cell operation, same units
    calib_scale: float = 1.0  # (TOPS/W) * energy-unit / op, set by calibrate_scale
    columns: int = DEFAULT_COLS  # columns converting in parallel
    unit_cap_fF: float = 1.5
    cell_area_um2: float = 2.3

    def __post_init__(self):
        if not 0 < self.comparator_fraction < 1:
            raise ValueError("comparator_fraction must lie in (0, 1)")
        for name in ("e_conv_base", "e_mac_cell", "calib_scale", "unit_cap_fF", "cell_area_um2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.columns < 1:
            raise ValueError("columns must be >= 1")

    @property
    def e_digital(self) -> float:
        """Fixed (non-comparator) share of a CB-off conversion."""
        return (1.0 - self.comparator_fraction) * self.e_conv_base


def fraction_for_overheads(power_ratio: float, time_ratio: float) -> float:
    """Comparator share f solving (1 - f) + f * time_ratio = power_ratio."""
    if time_ratio == 1:
        raise ValueError("time ratio 1 leaves f undetermined")
    return (power_ratio - 1.0) / (time_ratio - 1.0)


def conversion_cost(cfg: ConversionConfig, p: CostParams) -> tuple[float, int]:
    """(energy, comparator cycles) of one conversion."""
    cycles = cfg.comparisons
    f = p.comparator_fraction
    return p.e_conv_base * ((1.0 - f) + f * cycles / cfg.resolution), cycles


def comparator_energy_scale(noise_relaxation: float) -> float:
    """Comparator energy saved when its noise budget grows by ``noise_relaxation``.

    A thermal-noise-limited comparator needs energy proportional to 1 / sigma^2.
    """
    if noise_relaxation <= 0:
        raise ValueError("noise_relaxation must be > 0")
    return float(noise_relaxation) ** 2


def swing_penalty_db(architecture: str) -> float:
    if architecture not in ARCHITECTURES:
        raise ValueError(f"architecture must be one of {ARCHITECTURES}")
    return 0.0 if architecture == "cr" else -20.0 * math.log10(CONVENTIONAL_ATTENUATION)


def swing_advantage(architecture: str = "cr", baseline: str = "conventional") -> float:
    """SNR advantage in dB of ``architecture`` over ``baseline`` at equal comparator noise."""
    return swing_penalty_db(baseline) - swing_penalty_db(architecture)


# -- layers and workloads ---------------------------------------------------------

@dataclass(frozen=True)
class MatmulDims:
    """``vectors`` input vectors of length ``rows`` against a ``rows x cols`` matrix, ``count`` times."""

    rows: int
    cols: int
    vectors: int = 1
    count: int = 1

    def __post_init__(self):
        if min(self.rows, self.cols, self.vectors, self.count) < 1:
            raise ValueError(f"matmul dims must be positive, got {self}")

    @property
    def macs(self) -> int:
        return self.rows * self.cols * self.vectors * self.count

    @property
    def tiles(self) -> int:
        return math.ceil(self.rows / N_ACTIVE)


@dataclass(frozen=True)
class LayerCost:
    layer_id: str
    conversions: int
    cell_ops: int
    energy: float
    latency_cycles: int
    macs: int


def layer_cost(plan, dims: MatmulDims, p: CostParams, cfg: ConversionConfig = CB_OFF) -> LayerCost:
    """Bit-serial inputs x bit-sliced weights, one conversion per (tile, column, slice, plane).

    ``plan`` needs ``input_bits``, ``weight_bits`` and ``cb_enabled`` (a LayerPlan).
    ``cfg`` supplies the MV settings; its CB flag is replaced by the plan's.
    Latency assumes ``p.columns`` conversions run side by side.
    """
    slices = plan.weight_bits * plan.input_bits
    per_vector = dims.tiles * dims.cols * slices
    conversions = per_vector * dims.vectors * dims.count
    cell_ops = dims.rows * dims.cols * slices * dims.vectors * dims.count
    e_conv, cycles = conversion_cost(cfg.with_cb(plan.cb_enabled), p)
    energy = conversions * e_conv + cell_ops * p.e_mac_cell
    waves = math.ceil(dims.tiles * dims.cols * plan.weight_bits / p.columns) * plan.input_bits
    latency = waves * cycles * dims.vectors * dims.count
    return LayerCost(getattr(plan, "layer_id", ""), conversions, cell_ops, energy, latency, dims.macs)


def network_cost(plans: Sequence, dims: Sequence[MatmulDims], p: CostParams) -> list[LayerCost]:
    if len(plans) != len(dims):
        raise ValueError("one plan per layer required")
    return [layer_cost(pl, d, p) for pl, d in zip(plans, dims)]


def efficiency(costs: Iterable[LayerCost], p: CostParams) -> float:
    """TOPS/W-equivalent: operations per unit energy times ``calib_scale``."""
    costs = list(costs)
    ops = OPS_PER_MAC * sum(c.macs for c in costs)
    energy = sum(c.energy for c in costs)
    return ops / energy * p.calib_scale


def workload_efficiency(plans: Sequence, dims: Sequence[MatmulDims], p: CostParams) -> float:
    return efficiency(network_cost(plans, dims, p), p)


@dataclass(frozen=True)
class _Plan1b:
    layer_id: str = "baseline"
    input_bits: int = 1
    weight_bits: int = 1
    cb_enabled: bool = False


BASELINE_DIMS = MatmulDims(N_ACTIVE, DEFAULT_COLS)


def calibrate_scale(p: CostParams, target: float = BASELINE_TOPS_W) -> CostParams:
    """Return ``p`` with calib_scale set so a full 1023 x 78 binary matvec, CB off, reports ``target``."""
    raw = workload_efficiency([_Plan1b()], [BASELINE_DIMS], replace(p, calib_scale=1.0))
    return replace(p, calib_scale=target / raw)


def figure_of_merit(eff: float, snr_db: float, weight=None) -> float:
    """Efficiency times a function of SNR; defaults to 2^ENOB with ENOB = (SNR - 1.76) / 6.02."""
    g = weight or (lambda s: 2.0 ** ((s - 1.76) / 6.02))
    return eff * g(snr_db)


def array_area_um2(rows: int, cols: int, p: CostParams) -> float:
    return rows * cols * p.cell_area_um2


def write_cost_csv(costs: Sequence[LayerCost], path, plans: Sequence | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "input_bits", "weight_bits", "cb", "macs", "conversions", "cell_ops", "energy",
                    "latency_cycles"])
        for i, c in enumerate(costs):
            pl = plans[i] if plans is not None else None
            w.writerow([c.layer_id, getattr(pl, "input_bits", ""), getattr(pl, "weight_bits", ""),
                        int(pl.cb_enabled) if pl is not None else "", c.macs, c.conversions, c.cell_ops,
                        f"{c.energy:.6g}", c.latency_cycles])
        w.writerow(["total", "", "", "", sum(c.macs for c in costs), sum(c.conversions for c in costs),
                    sum(c.cell_ops for c in costs), f"{sum(c.energy for c in costs):.6g}",
                    sum(c.latency_cycles for c in costs)])
    return path


def ratio_table(p: CostParams) -> list[tuple[str, float]]:
    """Headline ratios: conversion time, power, comparator energy, swing."""
    e_off, c_off = conversion_cost(CB_OFF, p)
    e_on, c_on = conversion_cost(CB_OFF.with_cb(True), p)
    return [
        ("conversion_time_ratio", c_on / c_off),
        ("conversion_power_ratio", e_on / e_off),
        ("comparator_energy_scale", comparator_energy_scale(2.0)),
        ("swing_advantage_db", swing_advantage("cr", "conventional")),
    ]
