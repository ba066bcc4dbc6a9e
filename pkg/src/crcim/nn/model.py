"""Small pre-norm vision transformer in numpy, with optional macro-backed Linear layers.

Patch embedding, layer norms, softmax, GELU, the attention score products and
the classifier head stay in float (the digital side). In ``cim`` mode every
block projection (qkv, proj) and MLP layer (fc1, fc2) runs through
:class:`CimLinear`. Weights get one scale per tensor; activations one scale
per sample (the whole token x feature matrix of an image), or per token.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..adc import ConversionConfig, NoiseModel
from .cimlinear import ArrayPool, CimLinear
from .quant import QuantTensor, quantize, quantize_per_sample, quantize_rows
from . import tensorio

ATTENTION_LAYERS = ("qkv", "proj")
MLP_LAYERS = ("fc1", "fc2")
LN_EPS = 1e-5


@dataclass(frozen=True)
class ViTConfig:
    dim: int = 32
    heads: int = 4
    mlp_dim: int = 64
    patch: int = 2
    blocks: int = 2
    classes: int = 10
    image: int = 8

    @property
    def tokens(self) -> int:
        return (self.image // self.patch) ** 2 + 1

    def to_array(self) -> np.ndarray:
        return np.array([self.dim, self.heads, self.mlp_dim, self.patch, self.blocks, self.classes, self.image],
                        dtype=np.int64)

    @classmethod
    def from_array(cls, a) -> "ViTConfig":
        return cls(*(int(v) for v in a))


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x):
    # tanh form; the bundled weights were trained with the same approximation
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def patchify(images, patch: int) -> np.ndarray:
    n, h, w = images.shape
    g = h // patch
    return images.reshape(n, g, patch, g, patch).transpose(0, 1, 3, 2, 4).reshape(n, g * g, patch * patch)


def layer_names(cfg: ViTConfig) -> list[str]:
    return [f"blocks.{i}.{n}" for i in range(cfg.blocks) for n in ATTENTION_LAYERS + MLP_LAYERS]


def layer_kind(name: str) -> str:
    return "attention" if name.rsplit(".", 1)[-1] in ATTENTION_LAYERS else "mlp"


class CimContext:
    """Macro state for one evaluation run: the array pool, noise, plans and programmed layers."""

    def __init__(self, plans: Mapping, noise: NoiseModel, seed: int = 0, adc: ConversionConfig | None = None,
                 replicate: bool = True, sampler: str = "decision", act_scale: str = "sample"):
        if act_scale not in ("sample", "token"):
            raise ValueError("act_scale must be 'sample' or 'token'")
        self.plans = dict(plans)
        self.noise = noise
        self.seed = int(seed)
        self.adc = adc or ConversionConfig()
        self.replicate = replicate
        self.sampler = sampler
        self.act_scale = act_scale
        self.pool = ArrayPool(noise.mismatch_sigma, seed)
        self._layers: dict[str, CimLinear] = {}

    def plan(self, name: str):
        try:
            return self.plans[name]
        except KeyError:
            raise KeyError(f"no plan for layer {name!r}") from None

    def linear(self, name: str, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        pl = self.plan(name)
        if name not in self._layers:
            self._layers[name] = CimLinear(name, quantize(w, pl.weight_bits), self.pool, self.replicate)
        layer = self._layers[name]
        if self.act_scale == "token":
            xq = quantize_rows(x.reshape(-1, x.shape[-1]), pl.input_bits)
        else:
            q = quantize_per_sample(x, pl.input_bits)
            per_row = np.repeat(q.scale, int(np.prod(x.shape[1:-1], dtype=np.int64)))
            xq = QuantTensor(q.values.reshape(-1, x.shape[-1]), per_row, q.bits)
        acc = layer(xq, self.adc.with_cb(bool(pl.cb_enabled)), self.noise, self.seed, self.sampler)
        y = acc * (xq.scale[:, None] * layer.w.scale) + b
        return y.reshape(x.shape[:-1] + (w.shape[1],))


class ViT:
    def __init__(self, params: Mapping[str, np.ndarray]):
        self.cfg = ViTConfig.from_array(params["config"])
        self.p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items() if k != "config"}

    @classmethod
    def load(cls, path=None) -> "ViT":
        return cls(tensorio.load_bundled("desk_vit.crt") if path is None else tensorio.load(path))

    def layer_names(self) -> list[str]:
        return layer_names(self.cfg)

    def _linear(self, name, x, ctx):
        w, b = self.p[name + ".w"], self.p[name + ".b"]
        if ctx is None:
            return x @ w + b
        return ctx.linear(name, x, w, b)

    def _block(self, x, i, ctx, cls_only: bool):
        p, c = self.p, self.cfg
        pre = f"blocks.{i}."
        n, t, d = x.shape
        dh = d // c.heads
        h = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        qkv = self._linear(pre + "qkv", h, ctx).reshape(n, t, 3, c.heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (n, heads, t, dh)
        if cls_only:
            q = q[:, :, :1]
            x = x[:, :1]
        att = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh))
        o = (att @ v).transpose(0, 2, 1, 3).reshape(n, q.shape[2], d)
        x = x + self._linear(pre + "proj", o, ctx)
        h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        return x + self._linear(pre + "fc2", gelu(self._linear(pre + "fc1", h, ctx)), ctx)

    def forward(self, images, ctx: CimContext | None = None) -> np.ndarray:
        """Logits for ``(n, 8, 8)`` images in [0, 1]; ``ctx=None`` is the float oracle."""
        p, c = self.p, self.cfg
        x = patchify(np.asarray(images, dtype=np.float64), c.patch) @ p["embed.w"] + p["embed.b"]
        cls = np.broadcast_to(p["cls"], (x.shape[0], 1, c.dim))
        x = np.concatenate([cls, x], axis=1) + p["pos"]
        for i in range(c.blocks):
            # only the class token reaches the head, so the last block skips the rest
            x = self._block(x, i, ctx, cls_only=i == c.blocks - 1)
        return layer_norm(x[:, 0], p["ln.g"], p["ln.b"]) @ p["head.w"] + p["head.b"]

    def predict(self, images, ctx: CimContext | None = None, batch: int = 512) -> np.ndarray:
        out = [self.forward(images[s:s + batch], ctx).argmax(axis=1) for s in range(0, len(images), batch)]
        return np.concatenate(out)
