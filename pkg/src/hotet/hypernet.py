"""Hypernetworks that turn a context vector into potential-network weights."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .diffcore import DTYPE, check_finite
from .icnn import IcnnParams, IcnnSpec

INIT_VARIANCE = 0.1


class ScaledLinear(nn.Module):
    """Affine layer whose stored weights are N(0, INIT_VARIANCE).

    The forward pass multiplies by ``1/sqrt(fan_in)`` so the stored variance
    does not compound through depth: with a context vector of unit scale the
    generated weights come out of order 1e-2, which together with the
    quadratic term of the potential gives a near-identity map at start.
    """

    def __init__(self, fan_in: int, fan_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(fan_out, fan_in, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(fan_out, dtype=DTYPE))
        self.scale = 1.0 / math.sqrt(fan_in)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x @ self.weight.T) * self.scale + self.bias


class HyperNet(nn.Module):
    """ReLU MLP trunk with one output head per potential-network weight group.

    Heads that produce z-path weights (``A*``) are passed through ReLU so the
    generated network is always input-convex.
    """

    def __init__(self, spec: IcnnSpec, ctx_dim: int, hidden: tuple[int, ...] = (256, 256), seed: int = 0):
        super().__init__()
        self.spec = spec
        self.ctx_dim = ctx_dim
        self.hidden = tuple(hidden)
        widths = (ctx_dim,) + self.hidden
        self.trunk = nn.ModuleList([ScaledLinear(a, b) for a, b in zip(widths[:-1], widths[1:])])
        self.shapes = dict(spec.shapes())
        self.heads = nn.ModuleDict({
            name: ScaledLinear(widths[-1], math.prod(shape)) for name, shape in self.shapes.items()
        })
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        std = math.sqrt(INIT_VARIANCE)
        with torch.no_grad():
            for layer in list(self.trunk) + [self.heads[n] for n in self.shapes]:
                layer.weight.copy_(torch.randn(layer.weight.shape, generator=g, dtype=DTYPE) * std)
                layer.bias.zero_()

    def output_size(self) -> int:
        return sum(h.bias.numel() for h in self.heads.values())

    def forward(self, z: torch.Tensor) -> dict[str, torch.Tensor]:
        """Raw per-group outputs for context ``z`` of shape (..., ctx_dim)."""
        if z.shape[-1] != self.ctx_dim:
            raise ValueError(f"context has width {z.shape[-1]}, hypernet expects {self.ctx_dim}")
        check_finite(z, "context vector")
        h = z
        for layer in self.trunk:
            h = F.relu(layer(h))
        out = {}
        for name, shape in self.shapes.items():
            raw = self.heads[name](h)
            if name.startswith("A"):
                raw = F.relu(raw)
            out[name] = raw.reshape(*z.shape[:-1], *shape)
        return out


def generate(hyper: HyperNet, z: torch.Tensor) -> IcnnParams:
    """Potential-network weights for a single context vector."""
    if z.dim() != 1:
        raise ValueError("generate takes one context vector; use generate_batch for stacks")
    return IcnnParams(hyper.spec, hyper(z))


def generate_batch(hyper: HyperNet, z: torch.Tensor) -> list[IcnnParams]:
    out = hyper(z)
    return [IcnnParams(hyper.spec, {k: v[i] for k, v in out.items()}) for i in range(z.shape[0])]


def init(spec: IcnnSpec, ctx_dim: int, seed: int, hidden: tuple[int, ...] = (256, 256)) -> HyperNet:
    return HyperNet(spec, ctx_dim, hidden, seed=seed)
