"""Minibatch dual losses (MM-B and MMv2) and plain potential-network training.

Conventions: ``f`` is the potential on the source side, so ``grad f`` is the
forward map; ``g`` lives on the target side and ``grad g`` is the inverse.
Argmax selections are made without gradient tracking; ties go to the lowest
index.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .diffcore import DTYPE, DivergenceError, check_finite
from .icnn import IcnnModule, IcnnParams, IcnnSpec, Potential, _as_fn, transport_map

Sampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass
class SolverConfig:
    kind: str = "mmb"
    batch_size: int = 1024
    inner_iters: int = 5
    lr: float = 1e-3
    iterations: int = 5000

    def __post_init__(self):
        if self.kind not in ("mmb", "mmv2"):
            raise ValueError(f"unknown solver {self.kind!r} (expected 'mmb' or 'mmv2')")
        if self.batch_size < 1 or self.inner_iters < 1:
            raise ValueError("batch_size and inner_iters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _frozen(potential: Potential) -> Callable[[torch.Tensor], torch.Tensor]:
    if isinstance(potential, IcnnParams):
        return _as_fn(potential.detach())
    return potential


def conjugate_selection(values: torch.Tensor, support: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
    """For each query y_j, the index i maximizing <support_i, y_j> - values_i."""
    with torch.no_grad():
        scores = support @ queries.T - values.detach()[:, None]
        return torch.argmax(scores, dim=0)


def mmb_terms(f: Potential, g: Potential, X: torch.Tensor, Y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward (f) and inverse (g) halves of the symmetrized MM-B loss."""
    if X.shape != Y.shape:
        raise ValueError(f"paired minibatches must have equal shape, got {tuple(X.shape)} and {tuple(Y.shape)}")
    fX = check_finite(_as_fn(f)(X), "f(X)")
    i = conjugate_selection(fX, X, Y)
    gY = check_finite(_as_fn(g)(Y), "g(Y)")
    k = conjugate_selection(gY, Y, X)
    return fX.mean() - fX[i].mean(), gY.mean() - gY[k].mean()


def mmb_loss(f: Potential, g: Potential, X: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    fwd, inv = mmb_terms(f, g, X, Y)
    return fwd + inv


def mmv2_inner_loss(g: Potential, f: Potential, Y: torch.Tensor) -> torch.Tensor:
    """Objective maximized over ``g`` with ``f`` held fixed."""
    gy = transport_map(g, Y, create_graph=True)
    return check_finite(((gy * Y).sum(-1) - _frozen(f)(gy)).mean(), "MMv2 inner loss")


def mmv2_outer_loss(f: Potential, g: Potential, X: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    """Objective minimized over ``f`` with ``g`` held fixed."""
    gy = transport_map(_frozen(g), Y, create_graph=False).detach()
    f_fn = _as_fn(f)
    return check_finite(f_fn(X).mean() - f_fn(gy).mean(), "MMv2 outer loss")


def dual_objective_estimate(f: Potential, X: torch.Tensor, Y: torch.Tensor) -> float:
    """Minibatch value of  E_mu f + E_nu f^*  with the conjugate taken over X."""
    with torch.no_grad():
        fX = _as_fn(f)(X)
        conj = (X @ Y.T - fX[:, None]).max(dim=0).values
        return float(check_finite(fX.mean() + conj.mean(), "dual objective"))


def _batch(sampler: Sampler, n: int, rng: np.random.Generator) -> torch.Tensor:
    return torch.as_tensor(sampler(n, rng), dtype=DTYPE)


@dataclass
class FitResult:
    f: IcnnModule
    g: IcnnModule
    trace: list[dict]
    seconds: float


def fit(source: Sampler, target: Sampler, spec: IcnnSpec, cfg: SolverConfig, seed: int = 0,
        log_every: int = 100, callback: Optional[Callable[[int, IcnnModule, IcnnModule], None]] = None) -> FitResult:
    """Train two potential networks directly with the chosen solver.

    ``callback(iteration, f, g)`` runs after every logged step.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    f, g = IcnnModule(spec, seed=seed), IcnnModule(spec, seed=seed + 1)
    opt_f = torch.optim.Adam(f.parameters(), lr=cfg.lr)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr)
    trace = []
    start = time.perf_counter()
    for it in range(cfg.iterations):
        X, Y = _batch(source, cfg.batch_size, rng), _batch(target, cfg.batch_size, rng)
        if cfg.kind == "mmb":
            fwd, inv = mmb_terms(f.params(), g.params(), X, Y)
            opt_f.zero_grad(), opt_g.zero_grad()
            (fwd + inv).backward()
            opt_f.step(), opt_g.step()
            rec = {"iteration": it, "loss_fwd": fwd.item(), "loss_inv": inv.item()}
        else:
            for _ in range(cfg.inner_iters):
                inner = mmv2_inner_loss(g.params(), f.params(), Y)
                opt_g.zero_grad()
                (-inner).backward()
                opt_g.step()
                g.project_()
            outer = mmv2_outer_loss(f.params(), g.params(), X, Y)
            opt_f.zero_grad()
            outer.backward()
            opt_f.step()
            rec = {"iteration": it, "loss_fwd": outer.item(), "loss_inv": inner.item()}
        f.project_()
        g.project_()
        if not np.isfinite([rec["loss_fwd"], rec["loss_inv"]]).all():
            raise DivergenceError(f"non-finite loss at iteration {it}")
        if it % log_every == 0 or it == cfg.iterations - 1:
            trace.append(rec)
            if callback is not None:
                callback(it, f, g)
    return FitResult(f, g, trace, time.perf_counter() - start)
