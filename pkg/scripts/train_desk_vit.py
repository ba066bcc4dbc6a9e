"""Train the bundled desk ViT on 8x8 digits and export it (needs torch and scikit-learn).

    python3 scripts/train_desk_vit.py [--epochs 60] [--seed 0]

Writes src/crcim/data/digits.crt (images, labels, split) and
src/crcim/data/desk_vit.crt (weights, stored as ``x @ W`` matrices).
The numpy forward pass in crcim.nn.model must reproduce the torch accuracy.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.datasets import load_digits

from crcim.nn import tensorio
from crcim.nn.model import ViT, ViTConfig, patchify

DATA = Path(__file__).resolve().parents[1] / "src" / "crcim" / "data"
N_TRAIN = 1437


class Block(nn.Module):
    def __init__(self, c: ViTConfig):
        super().__init__()
        self.c = c
        self.ln1 = nn.LayerNorm(c.dim)
        self.qkv = nn.Linear(c.dim, 3 * c.dim)
        self.proj = nn.Linear(c.dim, c.dim)
        self.ln2 = nn.LayerNorm(c.dim)
        self.fc1 = nn.Linear(c.dim, c.mlp_dim)
        self.fc2 = nn.Linear(c.mlp_dim, c.dim)

    def forward(self, x):
        n, t, d = x.shape
        q, k, v = self.qkv(self.ln1(x)).reshape(n, t, 3, self.c.heads, d // self.c.heads).permute(2, 0, 3, 1, 4)
        a = (q @ k.transpose(-1, -2) / np.sqrt(d // self.c.heads)).softmax(-1)
        x = x + self.proj((a @ v).transpose(1, 2).reshape(n, t, d))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x)), approximate="tanh"))


class TorchViT(nn.Module):
    def __init__(self, c: ViTConfig):
        super().__init__()
        self.c = c
        self.embed = nn.Linear(c.patch**2, c.dim)
        self.cls = nn.Parameter(torch.zeros(1, 1, c.dim))
        self.pos = nn.Parameter(torch.randn(1, c.tokens, c.dim) * 0.02)
        self.blocks = nn.ModuleList([Block(c) for _ in range(c.blocks)])
        self.ln = nn.LayerNorm(c.dim)
        self.head = nn.Linear(c.dim, c.classes)

    def forward(self, x):
        x = self.embed(x)
        x = torch.cat([self.cls.expand(x.shape[0], -1, -1), x], 1) + self.pos
        for b in self.blocks:
            x = b(x)
        return self.head(self.ln(x[:, 0]))


def export(m: TorchViT) -> dict[str, np.ndarray]:
    out = {"config": m.c.to_array()}
    for name, mod in m.named_modules():
        if isinstance(mod, nn.Linear):
            out[name + ".w"] = mod.weight.detach().numpy().T.astype(np.float32)
            out[name + ".b"] = mod.bias.detach().numpy().astype(np.float32)
        elif isinstance(mod, nn.LayerNorm):
            out[name + ".g"] = mod.weight.detach().numpy().astype(np.float32)
            out[name + ".b"] = mod.bias.detach().numpy().astype(np.float32)
    out["cls"] = m.cls.detach().numpy().reshape(-1).astype(np.float32)
    out["pos"] = m.pos.detach().numpy().reshape(m.c.tokens, m.c.dim).astype(np.float32)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=3e-3)
    args = ap.parse_args(argv)

    d = load_digits()
    idx = np.random.default_rng(0).permutation(len(d.target))
    tr, te = np.sort(idx[:N_TRAIN]), np.sort(idx[N_TRAIN:])
    tensorio.save(DATA / "digits.crt", {"images": d.images.astype(np.uint8), "labels": d.target.astype(np.uint8),
                                        "train_idx": tr.astype(np.int64), "test_idx": te.astype(np.int64)})

    torch.manual_seed(args.seed)
    c = ViTConfig()
    X = patchify(d.images.astype(np.float32) / 16.0, c.patch).astype(np.float32)
    Xtr, ytr = torch.tensor(X[tr]), torch.tensor(d.target[tr])
    Xte, yte = torch.tensor(X[te]), torch.tensor(d.target[te])
    m = TorchViT(c)
    opt = torch.optim.AdamW(m.parameters(), args.lr, weight_decay=0.05)
    steps = args.epochs * -(-len(ytr) // 64)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, args.lr, total_steps=steps)
    for _ in range(args.epochs):
        perm = torch.randperm(len(ytr))
        for i in range(0, len(ytr), 64):
            b = perm[i:i + 64]
            loss = F.cross_entropy(m(Xtr[b]), ytr[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
    m.eval()
    with torch.no_grad():
        acc_t = (m(Xte).argmax(1) == yte).float().mean().item() * 100
    params = export(m)
    tensorio.save(DATA / "desk_vit.crt", params)
    acc_np = float(np.mean(ViT(params).predict(d.images[te] / 16.0) == d.target[te]) * 100)
    print(f"test accuracy: torch {acc_t:.2f}%, numpy {acc_np:.2f}%")


if __name__ == "__main__":
    main()
