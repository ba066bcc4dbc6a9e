"""Per-layer precision and CB assignment from layer noise tolerance.

A layer running at B bits with CB mode ``cb`` is modeled as two noise
sources in series: operand quantization at B bits and the macro readout. Its
achievable CSNR is the smaller of the two measured SNRs (bottleneck model).
Attention layers tolerate 10 dB less CSNR than MLP layers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .costmodel import CostParams, MatmulDims, layer_cost

KINDS = ("attention", "mlp")
ATTENTION_RELIEF_DB = 10.0
BITS = tuple(range(2, 9))
_TOL = 1e-9


class InfeasiblePlanError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    layer_id: str
    kind: str
    dims: MatmulDims

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"layer kind must be one of {KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class LayerPlan:
    layer_id: str
    kind: str
    input_bits: int
    weight_bits: int
    cb_enabled: bool
    required_csnr: float
    achievable_csnr: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"layer kind must be one of {KINDS}")
        for b in (self.input_bits, self.weight_bits):
            if not 1 <= b <= 8:
                raise ValueError("bits must lie in [1, 8]")

    @property
    def bits(self) -> int:
        return self.input_bits


@dataclass(frozen=True)
class Achievable:
    """Measured SNR table: macro CSNR per CB mode, operand SNR per precision."""

    cb_on: float
    cb_off: float
    precision: Mapping[int, float]

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Achievable":
        return cls(float(m["cb_on"]), float(m["cb_off"]), {int(k): float(v) for k, v in m["precision"].items()})

    def csnr(self, bits: int, cb: bool) -> float:
        if bits not in self.precision:
            raise KeyError(f"no operand SNR measured at {bits} bits")
        return min(self.precision[bits], self.cb_on if cb else self.cb_off)


def required_csnr(kind: str, mlp_requirement: float) -> float:
    if kind not in KINDS:
        raise ValueError(f"layer kind must be one of {KINDS}")
    if mlp_requirement != mlp_requirement or abs(mlp_requirement) == float("inf"):
        raise ValueError("mlp_requirement must be finite")
    return mlp_requirement - ATTENTION_RELIEF_DB if kind == "attention" else mlp_requirement


def plan_layer(layer: Layer, achievable: Achievable, requirement: float, p: CostParams,
               bits_options: Sequence[int] = BITS) -> LayerPlan:
    """Cheapest feasible (bits, cb); ties go to lower energy, then lower bits, then CB off."""
    best = None
    for b in bits_options:
        if b not in achievable.precision:
            continue
        for cb in (False, True):
            a = achievable.csnr(b, cb)
            if a + _TOL < requirement:
                continue
            cand = LayerPlan(layer.layer_id, layer.kind, b, b, cb, requirement, a)
            key = (layer_cost(cand, layer.dims, p).energy, b, cb)
            if best is None or key < best[0]:
                best = (key, cand)
    if best is None:
        top = max(achievable.csnr(b, True) for b in bits_options if b in achievable.precision)
        raise InfeasiblePlanError(f"layer {layer.layer_id} ({layer.kind}) needs {requirement:.2f} dB; best "
                                  f"achievable {top:.2f} dB, deficit {requirement - top:.2f} dB")
    return best[1]


def plan_network(layers: Sequence[Layer], achievable, mlp_requirement: float | None = None,
                 p: CostParams | None = None, requirements: Mapping[str, float] | None = None) -> list[LayerPlan]:
    """Plan every layer. The MLP requirement defaults to the measured CB-on CSNR.

    ``requirements`` overrides the requirement of individual layers by id.
    """
    if not isinstance(achievable, Achievable):
        achievable = Achievable.from_mapping(achievable)
    p = p or CostParams()
    mlp_req = achievable.cb_on if mlp_requirement is None else mlp_requirement
    overrides = requirements or {}
    return [plan_layer(l, achievable, overrides.get(l.layer_id, required_csnr(l.kind, mlp_req)), p)
            for l in layers]


def uniform_plan(layers: Sequence[Layer], bits: int = 6, cb: bool = True) -> list[LayerPlan]:
    return [LayerPlan(l.layer_id, l.kind, bits, bits, cb, 0.0) for l in layers]


def network_energy(plans: Sequence[LayerPlan], layers: Sequence[Layer], p: CostParams) -> float:
    by_id = {pl.layer_id: pl for pl in plans}
    missing = [l.layer_id for l in layers if l.layer_id not in by_id]
    if missing:
        raise ValueError(f"plan does not cover layers {missing}")
    return sum(layer_cost(by_id[l.layer_id], l.dims, p).energy for l in layers)


def efficiency_gain(plans: Sequence[LayerPlan], baseline: Sequence[LayerPlan], layers: Sequence[Layer],
                    p: CostParams | None = None) -> float:
    """Baseline energy over planned energy for the same layers."""
    p = p or CostParams()
    return network_energy(baseline, layers, p) / network_energy(plans, layers, p)


# -- I/O ---------------------------------------------------------------------------

def load_workload(path=None) -> tuple[str, list[Layer]]:
    """Read a workload JSON; ``None`` loads the bundled ViT-small description."""
    if path is None:
        from importlib.resources import files

        text = files("crcim.data").joinpath("workloads", "vit_small.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    layers = []
    for item in doc["layers"]:
        dims = MatmulDims(int(item["rows"]), int(item["cols"]), int(item.get("vectors", 1)),
                          int(item.get("count", 1)))
        layers.append(Layer(str(item["id"]), str(item["kind"]), dims))
    if not layers:
        raise ValueError("workload has no layers")
    return str(doc.get("name", "workload")), layers


def plans_to_json(plans: Sequence[LayerPlan]) -> str:
    return json.dumps({"layers": [asdict(pl) for pl in plans]}, indent=2) + "\n"


def save_plans(plans: Sequence[LayerPlan], path) -> Path:
    path = Path(path)
    path.write_text(plans_to_json(plans), encoding="utf-8")
    return path


def load_plans(path) -> list[LayerPlan]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [LayerPlan(**item) for item in doc["layers"]]


def format_table(plans: Sequence[LayerPlan]) -> str:
    head = f"{'layer':<14}{'kind':<11}{'in':>4}{'w':>4}{'cb':>5}{'req dB':>9}{'ach dB':>9}"
    lines = [head, "-" * len(head)]
    for pl in plans:
        ach = "" if pl.achievable_csnr is None else f"{pl.achievable_csnr:9.2f}"
        lines.append(f"{pl.layer_id:<14}{pl.kind:<11}{pl.input_bits:>4}{pl.weight_bits:>4}"
                     f"{'on' if pl.cb_enabled else 'off':>5}{pl.required_csnr:9.2f}{ach}")
    return "\n".join(lines)
