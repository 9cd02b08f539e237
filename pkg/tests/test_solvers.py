import numpy as np
import pytest
import torch

from hotet.bench import gaussian, gaussian_ot_map
from hotet.diffcore import DTYPE, grad_params
from hotet.icnn import IcnnParams, IcnnSpec, random_params, transport_map
from hotet.solvers import (SolverConfig, conjugate_selection, dual_objective_estimate, fit, mmb_loss, mmb_terms,
                           mmv2_inner_loss, mmv2_outer_loss)

from oracles import conjugate_argmax, icnn_value, mmb_reference

T = lambda a: torch.tensor(a, dtype=DTYPE)
half_sq = lambda x: 0.5 * (x * x).sum(-1)
zero = lambda x: torch.zeros(x.shape[:-1], dtype=DTYPE)


def _np(p):
    return {k: v.detach().numpy() for k, v in p.tensors.items()}


def _trainable(p: IcnnParams) -> IcnnParams:
    return IcnnParams(p.spec, {k: v.clone().requires_grad_(True) for k, v in p.tensors.items()})


def test_single_sample_loss_is_zero():
    gen = torch.Generator().manual_seed(0)
    f, g = (random_params(IcnnSpec(2, (4,)), gen) for _ in range(2))
    X, Y = torch.randn(1, 2, generator=gen, dtype=DTYPE), torch.randn(1, 2, generator=gen, dtype=DTYPE)
    assert mmb_loss(f, g, X, Y).item() == 0.0


def test_one_dimensional_worked_example():
    X, Y = T([[0.0], [1.0]]), T([[2.0], [3.0]])
    sq = lambda x: (x * x).sum(-1)
    assert conjugate_selection(sq(X), X, Y).tolist() == [1, 1]
    fwd, inv = mmb_terms(sq, zero, X, Y)
    assert fwd.item() == -0.5 and inv.item() == 0.0
    assert mmb_loss(sq, zero, X, Y).item() == -0.5


def test_mmb_matches_brute_force():
    rng = np.random.default_rng(1)
    gen = torch.Generator().manual_seed(1)
    spec = IcnnSpec(3, (6, 6))
    for _ in range(30):
        b = int(rng.integers(1, 40))
        f, g = random_params(spec, gen), random_params(spec, gen)
        X, Y = rng.normal(size=(b, 3)), rng.normal(size=(b, 3)) * 2 + 1
        got = mmb_loss(f, g, torch.as_tensor(X), torch.as_tensor(Y)).item()
        want = mmb_reference(lambda x: icnn_value(_np(f), x), lambda y: icnn_value(_np(g), y), X, Y)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
        fX = icnn_value(_np(f), X)
        sel = conjugate_selection(torch.as_tensor(fX), torch.as_tensor(X), torch.as_tensor(Y)).numpy()
        assert np.array_equal(sel, conjugate_argmax(fX, X, Y))


def test_mmb_permutation_invariance():
    rng = np.random.default_rng(2)
    gen = torch.Generator().manual_seed(2)
    f, g = random_params(IcnnSpec(2, (5,)), gen), random_params(IcnnSpec(2, (5,)), gen)
    X, Y = torch.as_tensor(rng.normal(size=(20, 2))), torch.as_tensor(rng.normal(size=(20, 2)))
    perm = torch.as_tensor(rng.permutation(20))
    assert mmb_loss(f, g, X[perm], Y[perm]).item() == pytest.approx(mmb_loss(f, g, X, Y).item(), abs=1e-13)


def test_mmb_rejects_unequal_batches():
    with pytest.raises(ValueError):
        mmb_loss(half_sq, half_sq, torch.zeros(3, 2, dtype=DTYPE), torch.zeros(4, 2, dtype=DTYPE))


def test_mmv2_inner_worked_examples():
    Y = T([[1.0, 0.0], [0.0, 2.0]])
    assert mmv2_inner_loss(half_sq, zero, Y).item() == 2.5
    assert mmv2_inner_loss(half_sq, half_sq, Y).item() == 1.25


def test_mmv2_outer_worked_examples():
    rng = np.random.default_rng(3)
    X = torch.as_tensor(rng.normal(size=(10, 2)))
    assert mmv2_outer_loss(half_sq, half_sq, X, X.clone()).item() == pytest.approx(0.0, abs=1e-15)
    c = T([0.3, -1.2])
    Y = torch.as_tensor(rng.normal(size=(10, 2)))
    g = lambda y: 0.5 * (y * y).sum(-1) + y @ T([1.0, 2.0])
    got = mmv2_outer_loss(lambda x: x @ c, g, X, Y).item()
    want = c @ (X.mean(0) - (Y + T([1.0, 2.0])).mean(0))
    assert got == pytest.approx(want.item(), abs=1e-14)


def test_mmv2_outer_matches_direct_formula():
    rng = np.random.default_rng(4)
    gen = torch.Generator().manual_seed(4)
    spec = IcnnSpec(2, (5, 5))
    for _ in range(10):
        f, g = random_params(spec, gen), random_params(spec, gen)
        X, Y = torch.as_tensor(rng.normal(size=(8, 2))), torch.as_tensor(rng.normal(size=(8, 2)))
        gy = transport_map(g, Y, create_graph=False).numpy()
        want = icnn_value(_np(f), X.numpy()).mean() - icnn_value(_np(f), gy).mean()
        assert mmv2_outer_loss(f, g, X, Y).item() == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_freezing_convention():
    gen = torch.Generator().manual_seed(5)
    spec = IcnnSpec(2, (4, 4))
    f, g = _trainable(random_params(spec, gen)), _trainable(random_params(spec, gen))
    X, Y = torch.randn(6, 2, generator=gen, dtype=DTYPE), torch.randn(6, 2, generator=gen, dtype=DTYPE)
    f_leaves, g_leaves = list(f.tensors.values()), list(g.tensors.values())
    inner = mmv2_inner_loss(g, f, Y)
    assert all(bool((t == 0).all()) for t in grad_params(inner, f_leaves, allow_unused=True))
    assert any(bool((t != 0).any()) for t in grad_params(inner, g_leaves, allow_unused=True))
    outer = mmv2_outer_loss(f, g, X, Y)
    assert all(bool((t == 0).all()) for t in grad_params(outer, g_leaves, allow_unused=True))
    assert any(bool((t != 0).any()) for t in grad_params(outer, f_leaves, allow_unused=True))


def test_dual_objective_single_point():
    X = T([[1.0, 0.0]])
    assert dual_objective_estimate(half_sq, X, X) == 1.0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(kind="sgd")
    with pytest.raises(ValueError):
        SolverConfig(batch_size=0)


def test_trained_dual_objective_tracks_closed_form():
    # For the optimal potential, E f + E f* = (E|x|^2 + E|y|^2 - W2^2) / 2.
    m2, S2 = np.array([1.0, 0.0]), np.diag([4.0, 1.0])
    A, c = gaussian_ot_map(np.zeros(2), np.eye(2), m2, S2)
    w2_sq = float(np.sum(m2 ** 2) + np.trace(np.eye(2) + S2 - 2 * A))
    src, dst = gaussian(np.zeros(2), np.eye(2)), gaussian(m2, S2)
    rng = np.random.default_rng(6)
    X, Y = torch.as_tensor(src.draw(2048, rng)), torch.as_tensor(dst.draw(2048, rng))
    values = []
    res = fit(src.draw, dst.draw, IcnnSpec(2, (32, 32)), SolverConfig(batch_size=512, lr=3e-3, iterations=400),
              seed=0, log_every=50, callback=lambda it, f, g: values.append(dual_objective_estimate(f.params(), X, Y)))
    half_w2 = 0.5 * ((X * X).sum(1).mean() + (Y * Y).sum(1).mean()).item() - values[-1]
    assert abs(half_w2 - 0.5 * w2_sq) <= 0.1 * 0.5 * w2_sq
    assert np.mean(values[-3:]) < np.mean(values[:3])
    assert len(res.trace) == len(values)
