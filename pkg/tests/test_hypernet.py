import numpy as np
import pytest
import torch

from hotet.diffcore import DTYPE
from hotet.hypernet import INIT_VARIANCE, HyperNet, generate, generate_batch, init
from hotet.icnn import IcnnSpec, check_nonneg, default_spec, transport_map
from hotet.trainer import HotetModel


def _bytes(h: HyperNet) -> bytes:
    return b"".join(p.detach().numpy().tobytes() for p in h.parameters())


def test_output_size_equals_parameter_count():
    for spec in (IcnnSpec(2, (3,)), default_spec(8), IcnnSpec(5, (7, 4, 6))):
        assert HyperNet(spec, 16, (32,)).output_size() == spec.num_params()


def test_seeded_init_is_reproducible():
    spec = IcnnSpec(2, (8, 8))
    assert _bytes(init(spec, 16, seed=3)) == _bytes(init(spec, 16, seed=3))
    assert _bytes(init(spec, 16, seed=3)) != _bytes(init(spec, 16, seed=4))


def test_initial_weight_variance():
    h = HyperNet(default_spec(2), 128, (256, 256), seed=0)
    w = torch.cat([m.weight.reshape(-1) for m in list(h.trunk) + list(h.heads.values())])
    assert w.numel() >= 10_000
    assert 0.08 <= w.var().item() <= 0.12
    assert INIT_VARIANCE == 0.1


def test_zero_input_gives_clamped_biases():
    spec = IcnnSpec(2, (3, 2))
    h = HyperNet(spec, 4, (5,), seed=0)
    gen = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for m in list(h.trunk) + list(h.heads.values()):
            m.weight.zero_()
            m.bias.copy_(torch.randn(m.bias.shape, generator=gen, dtype=DTYPE))
    p = generate(h, torch.zeros(4, dtype=DTYPE))
    for name, shape in spec.shapes():
        b = h.heads[name].bias.detach().reshape(shape)
        want = b.clamp(min=0) if name.startswith("A") else b
        assert torch.equal(p[name], want), name


def test_a_head_negative_preactivation_is_zero():
    spec = IcnnSpec(2, (2,))
    h = HyperNet(spec, 3, (4,), seed=0)
    with torch.no_grad():
        h.heads["A1"].weight.zero_()
        h.heads["A1"].bias.fill_(-1.0)
    z = torch.randn(3, dtype=DTYPE)
    assert bool((generate(h, z)["A1"] == 0).all())


def test_generated_params_are_always_convex():
    spec = IcnnSpec(3, (8, 8))
    h = HyperNet(spec, 10, (16, 16), seed=1)
    z = torch.randn(1000, 10, dtype=DTYPE, generator=torch.Generator().manual_seed(1)) * 5
    with torch.no_grad():
        out = generate_batch(h, z)
    for p in out:
        check_nonneg(p)


def test_generate_is_pure_and_batch_consistent():
    h = HyperNet(IcnnSpec(2, (4,)), 6, (8,), seed=2)
    z = torch.randn(3, 6, dtype=DTYPE)
    batch = generate_batch(h, z)
    for i in range(3):
        single = generate(h, z[i])
        again = generate(h, z[i])
        for k in single.tensors:
            assert torch.equal(single[k], again[k])
            torch.testing.assert_close(single[k], batch[i][k], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        generate(h, z)
    with pytest.raises(ValueError):
        h(torch.zeros(5, dtype=DTYPE))


def test_fresh_model_is_near_identity():
    rng = np.random.default_rng(0)
    for d in (2, 8, 32):
        model = HotetModel(d, seed=0)
        pts = torch.as_tensor(rng.normal(size=(256, d)))
        w = torch.full((1, 256), 1 / 256, dtype=DTYPE)
        with torch.no_grad():
            f = generate_batch(model.hyper_fwd, model.context(pts[None], w))[0]
        x = torch.as_tensor(rng.normal(size=(2048, d)))
        t = transport_map(f, x, create_graph=False)
        ratio = ((t - x).norm(dim=1) / (1 + x.norm(dim=1))).mean().item()
        assert ratio <= 0.1, (d, ratio)
