import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from hotet.diffcore import DTYPE, DivergenceError, as_tensor, check_finite, evaluate, grad_input, grad_params
from hotet.icnn import IcnnSpec, icnn_forward, random_params
from hotet.solvers import mmv2_inner_loss

from oracles import central_gradient, directional_difference, icnn_value, rel_err


def _np(params):
    return {k: v.detach().numpy() for k, v in params.tensors.items()}


def test_quadratic_value_and_gradient():
    half_sq = lambda x: 0.5 * (x * x).sum(-1)
    x = torch.tensor([3.0, 4.0], dtype=DTYPE)
    assert evaluate(half_sq, x).item() == 12.5
    assert grad_input(half_sq, x).tolist() == [3.0, 4.0]


def test_softplus_at_zero():
    out = evaluate(F.softplus, torch.zeros((), dtype=DTYPE))
    assert out.item() == pytest.approx(math.log(2), abs=1e-15)


def test_linear_gradient_in_input_and_parameters():
    theta = torch.tensor([1.0, 2.0], dtype=DTYPE, requires_grad=True)
    for x in ([0.0, 0.0], [-3.0, 5.5]):
        g = grad_input(lambda v: v @ theta, torch.tensor(x, dtype=DTYPE))
        assert g.tolist() == [1.0, 2.0]
    x = torch.tensor([5.0, 7.0], dtype=DTYPE)
    (g,) = grad_params(theta @ x, [theta])
    assert g.tolist() == [5.0, 7.0]


def test_second_order_composition():
    # g(y) = w/2 |y|^2, loss = <grad g(y), y> = 5 w at y = (1, 2)
    w = torch.tensor(0.7, dtype=DTYPE, requires_grad=True)
    y = torch.tensor([1.0, 2.0], dtype=DTYPE)
    gy = grad_input(lambda v: 0.5 * w * (v * v).sum(-1), y)
    loss = (gy * y).sum()
    assert loss.item() == pytest.approx(3.5, abs=1e-14)
    (dw,) = grad_params(loss, [w])
    assert dw.item() == pytest.approx(5.0, abs=1e-14)


def test_icnn_forward_matches_straight_line_reference():
    g = torch.Generator().manual_seed(0)
    spec = IcnnSpec(3, (5, 4))
    for _ in range(10):
        p = random_params(spec, g)
        x = torch.randn(7, 3, generator=g, dtype=DTYPE)
        np.testing.assert_allclose(icnn_forward(p, x).numpy(), icnn_value(_np(p), x.numpy()), rtol=1e-13, atol=1e-13)


def test_grad_input_matches_finite_differences():
    g = torch.Generator().manual_seed(1)
    spec = IcnnSpec(3, (6, 5))
    for _ in range(20):
        p = random_params(spec, g)
        x = torch.randn(3, generator=g, dtype=DTYPE)
        an = grad_input(lambda v: icnn_forward(p, v), x, create_graph=False).numpy()
        fd = central_gradient(lambda v: icnn_value(_np(p), v), x.numpy(), h=1e-5)
        assert rel_err(an, fd) < 1e-6


def test_mmv2_inner_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(2)
    spec = IcnnSpec(2, (4, 3))
    for _ in range(10):
        f = random_params(spec, gen)
        g0 = random_params(spec, gen)
        Y = torch.randn(6, 2, generator=gen, dtype=DTYPE)
        flat = g0.flat().clone().requires_grad_(True)
        loss = lambda v: mmv2_inner_loss(type(g0).from_flat(spec, v), f, Y)
        (an,) = grad_params(loss(flat), [flat])
        v = torch.randn(flat.shape, generator=gen, dtype=DTYPE)
        fd = directional_difference(lambda t: loss(torch.as_tensor(t)).item(), flat.detach().numpy(), v.numpy())
        assert rel_err(an @ v, fd) < 1e-5


def test_linearity_of_grad_params():
    gen = torch.Generator().manual_seed(3)
    theta = torch.randn(5, generator=gen, dtype=DTYPE, requires_grad=True)
    x = torch.randn(5, generator=gen, dtype=DTYPE)
    l1 = (theta * x).sum() ** 2
    l2 = torch.sin(theta).sum()
    (g1,) = grad_params(l1, [theta])
    (g2,) = grad_params(l2, [theta])
    (g12,) = grad_params(2.0 * l1 - 3.0 * l2, [theta])
    torch.testing.assert_close(g12, 2.0 * g1 - 3.0 * g2, rtol=1e-14, atol=1e-14)


def test_evaluation_is_deterministic():
    gen = torch.Generator().manual_seed(4)
    p = random_params(IcnnSpec(4, (8, 8)), gen)
    x = torch.randn(100, 4, generator=gen, dtype=DTYPE)
    a = grad_input(lambda v: icnn_forward(p, v), x, create_graph=False)
    b = grad_input(lambda v: icnn_forward(p, v), x, create_graph=False)
    assert torch.equal(a, b)


def test_non_finite_values_raise():
    with pytest.raises(DivergenceError):
        check_finite(torch.tensor([1.0, float("nan")], dtype=DTYPE))
    with pytest.raises(DivergenceError):
        grad_input(lambda v: torch.sqrt(v).sum(-1) * float("inf"), torch.ones(2, dtype=DTYPE))


def test_grad_params_rejects_unused_parameters_unless_allowed():
    a = torch.ones(2, dtype=DTYPE, requires_grad=True)
    b = torch.ones(3, dtype=DTYPE, requires_grad=True)
    loss = (a * a).sum()
    with pytest.raises(ValueError):
        grad_params(loss, [a, b])
    ga, gb = grad_params(loss, [a, b], allow_unused=True)
    assert ga.tolist() == [2.0, 2.0] and torch.equal(gb, torch.zeros(3, dtype=DTYPE))


def test_shape_errors():
    with pytest.raises(ValueError):
        grad_params(torch.ones(2, dtype=DTYPE, requires_grad=True) * 1.0, [])
    with pytest.raises(ValueError):
        grad_input(lambda v: v * 2.0, torch.ones(3, 2, dtype=DTYPE))
    assert as_tensor([1, 2]).dtype == DTYPE
