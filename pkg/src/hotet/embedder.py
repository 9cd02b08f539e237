"""Set embedding of weighted point clouds with a position-free transformer.

Atom masses enter attention as an additive ``log m_j`` on the logit of key
``j``, i.e. each head computes

    D^{-1} exp(Q K^T / sqrt(p)) diag(m) V,   D = row sums,

which is the same as using ``diag(N m)``: the factor N cancels in the row
normalization.  Zero-mass atoms get a ``-inf`` logit and drop out.  The final
block's feed-forward layer maps to the context width and the output rows are
pooled with the atom masses, ``z = H^T m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .diffcore import DTYPE, check_finite

WEIGHT_TOL = 1e-9


@dataclass
class EmpiricalDistribution:
    """``n`` atoms in R^d with masses on the simplex."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = self.points.shape[0]
        if n < 1:
            raise ValueError("empirical distribution needs at least one atom")
        if self.weights.shape[0] != n:
            raise ValueError(f"{n} points but {self.weights.shape[0]} weights")
        if not (np.isfinite(self.points).all() and np.isfinite(self.weights).all()):
            raise ValueError("non-finite entries in distribution")
        if (self.weights < 0).any():
            raise ValueError("negative atom mass")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"atom masses sum to {self.weights.sum()!r}, expected 1")

    @classmethod
    def uniform(cls, points) -> "EmpiricalDistribution":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(points, np.full(points.shape[0], 1.0 / points.shape[0]))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """``size`` i.i.d. draws (with replacement) according to the masses."""
        idx = rng.choice(self.n, size=size, replace=True, p=self.weights)
        return self.points[idx]


def _log_masses(m: torch.Tensor) -> torch.Tensor:
    if bool((m < 0).any()):
        raise ValueError("negative atom mass")
    if bool((m.sum(-1) <= 0).any()):
        raise ValueError("all atom masses are zero")
    return torch.log(m)


def weighted_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Mass-weighted softmax attention for one or more heads.

    ``q, k, v``: (..., n, p); ``m``: (..., n) broadcastable over heads.
    """
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    logits = logits + _log_masses(m).unsqueeze(-2)
    return torch.softmax(logits, dim=-1) @ v


class AttentionBlock(nn.Module):
    """Pre-norm multi-head weighted attention followed by a feed-forward layer.

    With ``out_dim`` different from the model width the feed-forward output
    replaces the residual stream (used by the last block).
    """

    def __init__(self, heads: int, head_dim: int, ffn_dim: int, out_dim: int | None = None):
        super().__init__()
        width = heads * head_dim
        self.heads, self.head_dim = heads, head_dim
        self.norm_attn = nn.LayerNorm(width, dtype=DTYPE)
        self.q = nn.Linear(width, width, dtype=DTYPE)
        self.k = nn.Linear(width, width, dtype=DTYPE)
        self.v = nn.Linear(width, width, dtype=DTYPE)
        self.o = nn.Linear(width, width, dtype=DTYPE)
        self.norm_ffn = nn.LayerNorm(width, dtype=DTYPE)
        self.out_dim = out_dim or width
        self.ffn = nn.Sequential(
            nn.Linear(width, ffn_dim, dtype=DTYPE), nn.GELU(), nn.Linear(ffn_dim, self.out_dim, dtype=DTYPE)
        )

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        *lead, n, _ = t.shape
        return t.reshape(*lead, n, self.heads, self.head_dim).transpose(-2, -3)

    def attend(self, x: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        h = self.norm_attn(x)
        q, k, v = self._split(self.q(h)), self._split(self.k(h)), self._split(self.v(h))
        heads = weighted_attention(q, k, v, m.unsqueeze(-2))
        *lead, _, n, _ = heads.shape
        return self.o(heads.transpose(-2, -3).reshape(*lead, n, self.heads * self.head_dim))

    def forward(self, x: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        x = x + self.attend(x, m)
        out = self.ffn(self.norm_ffn(x))
        return x + out if self.out_dim == x.shape[-1] else out


class Embedder(nn.Module):
    """Maps a weighted point cloud of any size to a fixed-width context vector."""

    def __init__(self, input_dim: int, ctx_dim: int = 128, blocks: int = 3, heads: int = 4,
                 head_dim: int = 16, ffn_dim: int = 128, seed: int = 0):
        super().__init__()
        if blocks < 1:
            raise ValueError("need at least one block")
        self.config = dict(input_dim=input_dim, ctx_dim=ctx_dim, blocks=blocks, heads=heads,
                           head_dim=head_dim, ffn_dim=ffn_dim)
        width = heads * head_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.lift = nn.Linear(input_dim, width, dtype=DTYPE)
            self.blocks = nn.ModuleList([
                AttentionBlock(heads, head_dim, ffn_dim, out_dim=ctx_dim if i == blocks - 1 else None)
                for i in range(blocks)
            ])

    @property
    def ctx_dim(self) -> int:
        return self.config["ctx_dim"]

    def forward(self, points: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
        """``points`` (..., n, d), ``weights`` (..., n) -> context (..., ctx_dim)."""
        if points.shape[-1] != self.config["input_dim"]:
            raise ValueError(f"points have dim {points.shape[-1]}, embedder expects {self.config['input_dim']}")
        h = self.lift(points)
        for block in self.blocks:
            h = block(h, weights)
        z = (h * weights.unsqueeze(-1)).sum(-2)
        return check_finite(z, "context vector")


def embed(embedder: Embedder, dist: EmpiricalDistribution) -> torch.Tensor:
    return embedder(torch.as_tensor(dist.points, dtype=DTYPE), torch.as_tensor(dist.weights, dtype=DTYPE))

