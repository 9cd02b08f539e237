"""Input-convex potential networks.

A potential is

    z_1     = softplus(W_0 x + b_0)
    z_{l+1} = softplus(A_l z_l + W_l x + b_l)        l = 1 .. L-2
    z_L     = A_{L-1} z_{L-1} + W_{L-1} x + b_{L-1}   (width 1, linear)
    f(x)    = z_L + |(I + Q) x|^2 / 2

with every ``A_l`` elementwise non-negative and ``Q`` an unrestricted d x d
matrix.  softplus is convex, non-decreasing and smooth, so ``f`` is convex
and twice differentiable in ``x``.  The quadratic term makes all-zero
weights the identity map; ``Q`` lets the Hessian drop below the identity,
which a fixed ``|x|^2 / 2`` term would forbid (such a potential can only
produce expanding maps).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffcore import DTYPE, grad_input

ACTIVATIONS = {"softplus": F.softplus}


@dataclass(frozen=True)
class IcnnSpec:
    input_dim: int
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "softplus"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.hidden) < 1 or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def widths(self) -> tuple[int, ...]:
        return self.hidden + (1,)

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Named parameter shapes in canonical order (A, W, b per layer, then Q)."""
        out = []
        prev = None
        for layer, w in enumerate(self.widths):
            if layer > 0:
                out.append((f"A{layer}", (w, prev)))
            out.append((f"W{layer}", (w, self.input_dim)))
            out.append((f"b{layer}", (w,)))
            prev = w
        out.append(("Q", (self.input_dim, self.input_dim)))
        return out

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "IcnnSpec":
        return cls(int(d["input_dim"]), tuple(d["hidden"]), d.get("activation", "softplus"))


def default_spec(d: int) -> IcnnSpec:
    w = max(64, 2 * d)
    return IcnnSpec(d, (w, w))


@dataclass
class IcnnParams:
    """Weights of one potential network, keyed as in :meth:`IcnnSpec.shapes`."""

    spec: IcnnSpec
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        expected = dict(self.spec.shapes())
        if set(self.tensors) != set(expected):
            raise ValueError(f"parameter names {sorted(self.tensors)} do not match spec {sorted(expected)}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ValueError(f"{name}: shape {tuple(self.tensors[name].shape)} != {shape}")

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def z_weights(self) -> list[torch.Tensor]:
        return [self.tensors[f"A{l}"] for l in range(1, self.spec.num_layers)]

    def flat(self) -> torch.Tensor:
        return torch.cat([self.tensors[n].reshape(-1) for n, _ in self.spec.shapes()])

    @classmethod
    def from_flat(cls, spec: IcnnSpec, vec: torch.Tensor) -> "IcnnParams":
        if vec.numel() != spec.num_params():
            raise ValueError(f"flat vector has {vec.numel()} entries, spec needs {spec.num_params()}")
        out, i = {}, 0
        for name, shape in spec.shapes():
            n = int(np.prod(shape))
            out[name] = vec[i:i + n].reshape(shape)
            i += n
        return cls(spec, out)

    def detach(self) -> "IcnnParams":
        return IcnnParams(self.spec, {k: v.detach() for k, v in self.tensors.items()})


def zero_params(spec: IcnnSpec) -> IcnnParams:
    return IcnnParams(spec, {n: torch.zeros(s, dtype=DTYPE) for n, s in spec.shapes()})


def random_params(spec: IcnnSpec, generator: torch.Generator, scale: float = 1.0) -> IcnnParams:
    """Random weights with 1/sqrt(fan_in) scaling; z-path weights are |N(0, .)|."""
    out = {}
    for name, shape in spec.shapes():
        fan_in = shape[1] if len(shape) == 2 else 1
        t = torch.randn(shape, generator=generator, dtype=DTYPE) * scale / np.sqrt(fan_in)
        out[name] = t.abs() if name.startswith("A") else t
    return IcnnParams(spec, out)


def check_nonneg(params: IcnnParams) -> None:
    for name, t in params.tensors.items():
        if name.startswith("A") and bool((t < 0).any()):
            raise ValueError(f"{name} has negative entries; run project_nonneg first")


def icnn_forward(params: IcnnParams, x: torch.Tensor) -> torch.Tensor:
    """Potential value; ``x`` of shape (d,) gives a scalar, (n, d) gives (n,)."""
    spec = params.spec
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has dim {x.shape[-1]}, network expects {spec.input_dim}")
    check_nonneg(params)
    act = ACTIVATIONS[spec.activation]
    p = params.tensors
    last = spec.num_layers - 1
    z = act(x @ p["W0"].T + p["b0"])
    for l in range(1, spec.num_layers):
        z = z @ p[f"A{l}"].T + x @ p[f"W{l}"].T + p[f"b{l}"]
        if l < last:
            z = act(z)
    q = x + x @ p["Q"].T
    return z[..., 0] + 0.5 * (q * q).sum(-1)


Potential = Union[IcnnParams, Callable[[torch.Tensor], torch.Tensor]]


def _as_fn(potential: Potential) -> Callable[[torch.Tensor], torch.Tensor]:
    if isinstance(potential, IcnnParams):
        return lambda x: icnn_forward(potential, x)
    return potential


def transport_map(potential: Potential, x: torch.Tensor, create_graph: bool = True) -> torch.Tensor:
    """Gradient of the potential at ``x`` (one row per point)."""
    return grad_input(_as_fn(potential), x, create_graph=create_graph)


def inverse_point(potential_inv: Potential, y: torch.Tensor, create_graph: bool = True) -> torch.Tensor:
    """Inverse map, realized as the gradient of the second (target-side) potential."""
    return grad_input(_as_fn(potential_inv), y, create_graph=create_graph)


def project_nonneg(params: IcnnParams) -> IcnnParams:
    return IcnnParams(params.spec, {
        k: (v.clamp(min=0.0) if k.startswith("A") else v) for k, v in params.tensors.items()
    })


class IcnnModule(nn.Module):
    """Directly trainable potential, used by the plain solver baselines."""

    def __init__(self, spec: IcnnSpec, seed: int = 0, init_scale: float = 0.1):
        super().__init__()
        self.spec = spec
        g = torch.Generator().manual_seed(seed)
        init = random_params(spec, g, scale=init_scale)
        self.weights = nn.ParameterDict({k: nn.Parameter(v.clone()) for k, v in init.tensors.items()})

    def params(self) -> IcnnParams:
        return IcnnParams(self.spec, dict(self.weights))

    @torch.no_grad()
    def project_(self) -> None:
        for k, v in self.weights.items():
            if k.startswith("A"):
                v.clamp_(min=0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return icnn_forward(self.params(), x)
