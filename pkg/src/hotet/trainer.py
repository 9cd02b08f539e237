"""Training of the embedding + hypernetwork model.

Pair mode: forward weights come from the embedding of the source sample and
inverse weights from the embedding of the target sample.  Multi mode: both
come from the embedding of the source sample, since the target is fixed.
The generated potential weights are recomputed from the current modules at
every step; they are never stored or updated directly.

With the MMv2 solver the inverse hypernetwork is updated ``inner_iters``
times per step (ascent, with the context held fixed), then the embedder and
forward hypernetwork take one descent step on the outer loss.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .diffcore import DTYPE, DivergenceError
from .embedder import Embedder, EmpiricalDistribution
from .hypernet import HyperNet, generate_batch
from .icnn import IcnnParams, IcnnSpec, default_spec
from .solvers import SolverConfig, mmb_terms, mmv2_inner_loss, mmv2_outer_loss

log = logging.getLogger(__name__)

MODES = ("pair", "multi")


@dataclass
class TrainConfig:
    iterations: int = 5000
    dist_batch: int = 8
    sample_batch: int = 1024
    embed_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.dist_batch < 1 or self.sample_batch < 1 or self.embed_size < 1:
            raise ValueError("batch sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class HotetModel(nn.Module):
    """Embedder plus forward and inverse hypernetworks for one potential architecture."""

    def __init__(self, input_dim: int, spec: Optional[IcnnSpec] = None, ctx_dim: int = 128,
                 blocks: int = 3, heads: int = 4, head_dim: int = 16, ffn_dim: int = 128,
                 hyper_hidden: Sequence[int] = (256, 256), seed: int = 0):
        super().__init__()
        self.spec = spec or default_spec(input_dim)
        if self.spec.input_dim != input_dim:
            raise ValueError("potential spec and embedder disagree on the input dimension")
        self.topology = dict(input_dim=input_dim, spec=self.spec.to_dict(), ctx_dim=ctx_dim, blocks=blocks,
                             heads=heads, head_dim=head_dim, ffn_dim=ffn_dim,
                             hyper_hidden=list(hyper_hidden), seed=seed)
        self.embedder = Embedder(input_dim, ctx_dim, blocks, heads, head_dim, ffn_dim, seed=seed)
        self.hyper_fwd = HyperNet(self.spec, ctx_dim, tuple(hyper_hidden), seed=seed + 1)
        self.hyper_inv = HyperNet(self.spec, ctx_dim, tuple(hyper_hidden), seed=seed + 2)
        self.const_context: Optional[nn.Parameter] = None
        self.mode: Optional[str] = None

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def ablated(self) -> bool:
        return self.const_context is not None

    def context(self, points: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
        """Context vectors for a stack of point clouds, shape (B, n, d) -> (B, ctx)."""
        if points.shape[-1] != self.input_dim:
            raise ValueError(f"points have dim {points.shape[-1]}, model expects {self.input_dim}")
        if self.const_context is not None:
            return self.const_context.expand(points.shape[0], -1)
        return self.embedder(points, weights)

    def forward_params(self) -> list[nn.Parameter]:
        extra = [self.const_context] if self.const_context is not None else []
        emb = [] if self.ablated else list(self.embedder.parameters())
        return emb + list(self.hyper_fwd.parameters()) + extra

    def inverse_params(self) -> list[nn.Parameter]:
        return list(self.hyper_inv.parameters())


def ablate_embedding(model: HotetModel, seed: int = 0) -> HotetModel:
    """Copy of ``model`` whose context is a single trainable vector, whatever the input."""
    out = copy.deepcopy(model)
    g = torch.Generator().manual_seed(seed)
    ctx = out.embedder.ctx_dim
    out.const_context = nn.Parameter(torch.randn(1, ctx, generator=g, dtype=DTYPE) * 0.1)
    return out


def aggregate_losses(fwd: Sequence[float], inv: Sequence[float]) -> float:
    """Sum over the distribution batch of (forward + inverse) / (2 B)."""
    B = len(fwd)
    return float(sum((a + b) / (2 * B) for a, b in zip(fwd, inv)))


def _embed_input(x: torch.Tensor, size: int) -> tuple[torch.Tensor, torch.Tensor]:
    pts = x[..., :size, :]
    n = pts.shape[-2]
    return pts, torch.full(pts.shape[:-1], 1.0 / n, dtype=DTYPE)


def _as_dist(d) -> EmpiricalDistribution:
    return d if isinstance(d, EmpiricalDistribution) else EmpiricalDistribution.uniform(d)


@dataclass
class _Trainer:
    model: HotetModel
    cfg: TrainConfig
    mode: str
    opt_fwd: torch.optim.Optimizer
    opt_inv: torch.optim.Optimizer
    trace: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, model: HotetModel, cfg: TrainConfig, mode: str) -> "_Trainer":
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if model.mode is not None and model.mode != mode:
            log.info("switching model mode %s -> %s", model.mode, mode)
        opt_fwd = torch.optim.Adam(model.forward_params(), lr=cfg.lr)
        opt_inv = torch.optim.Adam(model.inverse_params(), lr=cfg.lr)
        return cls(model, cfg, mode, opt_fwd, opt_inv)

    def contexts(self, xs: torch.Tensor, ys: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        e = self.cfg.embed_size
        if self.mode == "multi":
            z = self.model.context(*_embed_input(xs, e))
            return z, z
        both = torch.cat([xs[:, :e], ys[:, :e]], dim=0)
        z = self.model.context(*_embed_input(both, e))
        B = xs.shape[0]
        return z[:B], z[B:]

    def step(self, it: int, xs: torch.Tensor, ys: torch.Tensor, ids: Sequence[int]) -> None:
        B = xs.shape[0]
        kind = self.cfg.solver.kind
        m = self.model
        if kind == "mmb":
            zf, zg = self.contexts(xs, ys)
            thetas, omegas = generate_batch(m.hyper_fwd, zf), generate_batch(m.hyper_inv, zg)
            terms = [mmb_terms(t, o, x, y) for t, o, x, y in zip(thetas, omegas, xs, ys)]
            loss = sum((a + b) / (2 * B) for a, b in terms)
            self.opt_fwd.zero_grad(), self.opt_inv.zero_grad()
            loss.backward()
            self.opt_fwd.step(), self.opt_inv.step()
            fwd = [a.item() for a, _ in terms]
            inv = [b.item() for _, b in terms]
        else:
            with torch.no_grad():
                zf, zg = self.contexts(xs, ys)
                thetas = generate_batch(m.hyper_fwd, zf)
            for _ in range(self.cfg.solver.inner_iters):
                omegas = generate_batch(m.hyper_inv, zg)
                inner = [mmv2_inner_loss(o, t, y) for o, t, y in zip(omegas, thetas, ys)]
                self.opt_inv.zero_grad()
                (-sum(inner) / B).backward()
                self.opt_inv.step()
            inv = [-v.item() for v in inner]
            with torch.no_grad():
                omegas = generate_batch(m.hyper_inv, zg)
            zf, _ = self.contexts(xs, ys)
            thetas = generate_batch(m.hyper_fwd, zf)
            outer = [mmv2_outer_loss(t, o, x, y) for t, o, x, y in zip(thetas, omegas, xs, ys)]
            self.opt_fwd.zero_grad()
            (sum(outer) / B).backward()
            self.opt_fwd.step()
            fwd = [v.item() for v in outer]
        if not np.isfinite(fwd + inv).all():
            raise DivergenceError(f"non-finite loss at iteration {it}; last records: {self.trace[-3:]}")
        for pid, a, b in zip(ids, fwd, inv):
            self.trace.append({"iteration": it, "pair": int(pid), "loss_fwd": a, "loss_inv": b})


def _draw(dist: EmpiricalDistribution, n: int, rng: np.random.Generator) -> torch.Tensor:
    return torch.as_tensor(dist.sample(n, rng), dtype=DTYPE)


def train_pair(model: HotetModel, mu, nu, cfg: TrainConfig) -> tuple[HotetModel, list[dict]]:
    """Fit one source/target pair; returns the (in-place updated) model and loss trace."""
    mu, nu = _as_dist(mu), _as_dist(nu)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    tr = _Trainer.create(model, cfg, "pair")
    b = cfg.sample_batch
    for it in range(cfg.iterations):
        tr.step(it, _draw(mu, b, rng)[None], _draw(nu, b, rng)[None], [0])
    if cfg.iterations:
        model.mode = "pair"
    return model, tr.trace


def train_multi(model: HotetModel, sources: Sequence, nu, cfg: TrainConfig) -> tuple[HotetModel, list[dict]]:
    """Fit many sources to one target, ``dist_batch`` sources per step."""
    sources = [_as_dist(s) for s in sources]
    nu = _as_dist(nu)
    if not sources:
        raise ValueError("need at least one source distribution")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    tr = _Trainer.create(model, cfg, "multi")
    B, b = min(cfg.dist_batch, len(sources)), cfg.sample_batch
    order: list[int] = []
    for it in range(cfg.iterations):
        if len(order) < B:
            order += list(rng.permutation(len(sources)))
        ids, order = order[:B], order[B:]
        xs = torch.stack([_draw(sources[i], b, rng) for i in ids])
        ys = torch.stack([_draw(nu, b, rng) for _ in ids])
        tr.step(it, xs, ys, ids)
    if cfg.iterations:
        model.mode = "multi"
    return model, tr.trace


def embedding_input(dist: EmpiricalDistribution, size: int, seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """Points and masses fed to the embedder; large clouds are subsampled reproducibly."""
    if dist.n <= size:
        return torch.as_tensor(dist.points, dtype=DTYPE), torch.as_tensor(dist.weights, dtype=DTYPE)
    pts = dist.sample(size, np.random.default_rng(seed))
    return torch.as_tensor(pts, dtype=DTYPE), torch.full((size,), 1.0 / size, dtype=DTYPE)


@torch.no_grad()
def predict(model: HotetModel, mu_new, embed_size: int = 256, seed: int = 0) -> tuple[IcnnParams, IcnnParams]:
    """Forward and inverse potentials for a new source, without any gradient step."""
    if model.mode != "multi":
        raise ValueError("predict needs a model trained in multi mode")
    mu_new = _as_dist(mu_new)
    if mu_new.dim != model.input_dim:
        raise ValueError(f"distribution has dim {mu_new.dim}, model expects {model.input_dim}")
    pts, w = embedding_input(mu_new, embed_size, seed)
    z = model.context(pts[None], w[None])
    return generate_batch(model.hyper_fwd, z)[0], generate_batch(model.hyper_inv, z)[0]


@torch.no_grad()
def pair_potentials(model: HotetModel, mu, nu, embed_size: int = 256, seed: int = 0) -> tuple[IcnnParams, IcnnParams]:
    """Potentials of a pair-mode model (inverse weights from the target's embedding)."""
    mu, nu = _as_dist(mu), _as_dist(nu)
    zf = model.context(*[t[None] for t in embedding_input(mu, embed_size, seed)])
    zg = model.context(*[t[None] for t in embedding_input(nu, embed_size, seed)])
    return generate_batch(model.hyper_fwd, zf)[0], generate_batch(model.hyper_inv, zg)[0]


def finetune(model: HotetModel, mu_new, nu, steps: int = 50, cfg: Optional[TrainConfig] = None) -> HotetModel:
    """Short training run on a single new pair; the input model is left untouched."""
    cfg = copy.deepcopy(cfg or TrainConfig())
    cfg.iterations = steps
    cfg.dist_batch = 1
    out = copy.deepcopy(model)
    if steps == 0:
        return out
    if out.mode == "multi":
        train_multi(out, [mu_new], nu, cfg)
    else:
        train_pair(out, mu_new, nu, cfg)
    return out


def write_trace(trace: Sequence[dict], path) -> None:
    """Loss trace as JSON lines, written atomically."""
    from .checkpoint import atomic_write

    atomic_write(path, "".join(json.dumps(rec) + "\n" for rec in trace).encode())
