"""Differentiation helpers shared by every model component.

All arithmetic runs in float64 on top of torch's reverse-mode engine.  The
engine records the graph while a function executes, so an input gradient
taken with ``create_graph=True`` is itself part of the graph and can be
differentiated again with respect to parameters (needed by the MMv2 losses,
which contain ``f(grad g(y))``).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64


class DivergenceError(FloatingPointError):
    """Raised when a non-finite value shows up in a forward or backward pass."""


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x, dtype=np.float64) if not torch.is_tensor(x) else x, dtype=DTYPE)
    if requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


def check_finite(t: torch.Tensor, what: str = "value") -> torch.Tensor:
    if not torch.isfinite(t).all():
        bad = int((~torch.isfinite(t)).sum())
        raise DivergenceError(f"{what}: {bad} non-finite entries (shape {tuple(t.shape)})")
    return t


def evaluate(fn: Callable[..., torch.Tensor], *leaves) -> torch.Tensor:
    """Forward value of ``fn`` at ``leaves``, detached from any graph."""
    with torch.no_grad():
        out = fn(*[as_tensor(v) for v in leaves])
    return check_finite(out, "evaluate")


def grad_input(fn: Callable[[torch.Tensor], torch.Tensor], x, create_graph: bool = True) -> torch.Tensor:
    """Gradient of a scalar-valued ``fn`` with respect to its input.

    ``x`` may be a single point ``(d,)`` or a batch ``(n, d)``; for a batch,
    ``fn`` must return one value per row and rows must not interact, so the
    gradient of the sum is the stack of per-point gradients.  With
    ``create_graph`` the result stays differentiable.
    """
    x = x if torch.is_tensor(x) else as_tensor(x)
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    with torch.enable_grad():
        out = fn(x)
        if x.dim() == 1 and out.numel() != 1:
            raise ValueError(f"grad_input needs a scalar output, got shape {tuple(out.shape)}")
        if x.dim() == 2 and out.shape not in ((x.shape[0],), ()):
            raise ValueError(f"grad_input needs one output per point, got shape {tuple(out.shape)}")
        (g,) = torch.autograd.grad(out.sum(), x, create_graph=create_graph)
    return check_finite(g, "grad_input")


def grad_params(loss: torch.Tensor, params: Sequence[torch.Tensor], allow_unused: bool = False) -> list[torch.Tensor]:
    """Exact gradients of a scalar ``loss`` with respect to ``params``.

    Raises ``ValueError`` if a parameter does not appear in the loss graph,
    unless ``allow_unused`` is set, in which case its gradient is exact zeros.
    Indices chosen by argmax inside the loss are constants here.
    """
    if loss.numel() != 1:
        raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    check_finite(loss, "loss")
    params = list(params)
    try:
        grads = torch.autograd.grad(loss, params, allow_unused=allow_unused, retain_graph=True)
    except RuntimeError as exc:
        raise ValueError(f"parameter not on the loss graph: {exc}") from exc
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    for g in grads:
        check_finite(g, "parameter gradient")
    return grads
