"""Accuracy of the desk ViT through the macro, over seeds."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..adc import NoiseModel
from ..costmodel import MatmulDims
from ..planner import Layer, LayerPlan, plan_network
from . import tensorio
from .model import CimContext, ViT, layer_kind


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, 8, 8) in [0, 1]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def load_digits(split: str = "test") -> Dataset:
    """Bundled 8x8 digits (1797 images) with a fixed train/test split."""
    t = tensorio.load_bundled("digits.crt")
    idx = t[f"{split}_idx"]
    return Dataset(t["images"][idx].astype(np.float64) / 16.0, t["labels"][idx].astype(np.int64))


@dataclass(frozen=True)
class EvalResult:
    mean: float
    std: float
    accuracies: tuple[float, ...] = field(default=())
    seeds: tuple[int, ...] = field(default=())


def accuracy(model: ViT, data: Dataset, ctx: CimContext | None = None) -> float:
    return float(np.mean(model.predict(data.images, ctx) == data.labels) * 100.0)


def evaluate(data: Dataset, model: ViT, plans: Mapping[str, LayerPlan] | None, noise: NoiseModel,
             seeds: Sequence[int], mode: str = "cim", **ctx_kw) -> EvalResult:
    """Top-1 accuracy (percent) per seed. Each seed fixes the comparator noise and the array instances."""
    if mode not in ("float", "cim"):
        raise ValueError("mode must be 'float' or 'cim'")
    accs = []
    for s in seeds:
        if mode == "float":
            accs.append(accuracy(model, data))
        else:
            nm = NoiseModel(noise.comparator_sigma, noise.mismatch_sigma, int(s))
            accs.append(accuracy(model, data, CimContext(plans, nm, int(s), **ctx_kw)))
    a = np.array(accs)
    return EvalResult(float(a.mean()), float(a.std()), tuple(accs), tuple(int(s) for s in seeds))


def model_layers(model: ViT, images: int = 1) -> list[Layer]:
    """Planner view of the desk model's macro-mapped layers."""
    c = model.cfg
    dims = {"qkv": (c.dim, 3 * c.dim), "proj": (c.dim, c.dim), "fc1": (c.dim, c.mlp_dim), "fc2": (c.mlp_dim, c.dim)}
    out = []
    for name in model.layer_names():
        r, k = dims[name.rsplit(".", 1)[-1]]
        out.append(Layer(name, layer_kind(name), MatmulDims(r, k, c.tokens * images)))
    return out


def fixed_plans(model: ViT, attention: tuple[int, bool], mlp: tuple[int, bool]) -> dict[str, LayerPlan]:
    """Uniform (bits, cb) per layer kind."""
    out = {}
    for name in model.layer_names():
        bits, cb = attention if layer_kind(name) == "attention" else mlp
        out[name] = LayerPlan(name, layer_kind(name), bits, bits, cb, 0.0)
    return out


def planned(model: ViT, achievable, mlp_requirement: float | None = None) -> dict[str, LayerPlan]:
    """Plans for the desk model from the co-design planner."""
    return {pl.layer_id: pl for pl in plan_network(model_layers(model), achievable, mlp_requirement)}


def swapped(plans: Mapping[str, LayerPlan]) -> dict[str, LayerPlan]:
    """Give each layer kind the other kind's (bits, cb) setting."""
    by_kind = {pl.kind: (pl.input_bits, pl.cb_enabled) for pl in plans.values()}
    if set(by_kind) != {"attention", "mlp"}:
        raise ValueError("swap needs both attention and mlp layers")
    out = {}
    for name, pl in plans.items():
        bits, cb = by_kind["mlp" if pl.kind == "attention" else "attention"]
        out[name] = LayerPlan(name, pl.kind, bits, bits, cb, pl.required_csnr)
    return out
