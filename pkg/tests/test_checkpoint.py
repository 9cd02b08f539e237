import numpy as np
import pytest
import torch

from hotet.checkpoint import (MAGIC, CheckpointError, load_model, load_potentials, model_bytes, model_from_bytes,
                              pack, save_model, save_potentials, unpack)
from hotet.embedder import EmpiricalDistribution
from hotet.icnn import IcnnSpec, random_params
from hotet.trainer import TrainConfig, ablate_embedding, predict, train_multi
from hotet.solvers import SolverConfig


def _trained(tiny, ablate=False):
    rng = np.random.default_rng(0)
    dists = [EmpiricalDistribution.uniform(rng.normal(size=(64, 2)) + i) for i in range(3)]
    nu = EmpiricalDistribution.uniform(rng.normal(size=(128, 2)))
    m = tiny()
    if ablate:
        m = ablate_embedding(m)
    cfg = TrainConfig(iterations=2, sample_batch=32, embed_size=16, dist_batch=2, solver=SolverConfig("mmv2", inner_iters=1))
    train_multi(m, dists, nu, cfg)
    return m, dists


@pytest.mark.parametrize("ablate", [False, True])
def test_round_trip_is_bitwise(tiny, tmp_path, ablate):
    m, dists = _trained(tiny, ablate)
    save_model(m, tmp_path / "m.ckpt", {"note": "x"})
    m2, cfg = load_model(tmp_path / "m.ckpt")
    assert cfg == {"note": "x"} and m2.mode == "multi" and m2.ablated == ablate
    assert model_bytes(m2, cfg) == model_bytes(m, cfg)
    for a, b in zip(predict(m, dists[0], 16), predict(m2, dists[0], 16)):
        assert all(torch.equal(a[k], b[k]) for k in a.tensors)


def test_header_is_readable_text(tiny):
    data = model_bytes(tiny())
    header = data[len(MAGIC):].split(b"\n", 1)[0].decode()
    assert '"version": 1' in header and '"arrays"' in header


def test_rejects_other_versions_and_garbage():
    data = pack("model", {}, {"a": np.ones(2)})
    with pytest.raises(CheckpointError, match="version"):
        unpack(data.replace(b'"version": 1', b'"version": 99'))
    with pytest.raises(CheckpointError):
        unpack(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        unpack(data[:-3])
    with pytest.raises(CheckpointError):
        unpack(MAGIC + b"{oops\n")
    with pytest.raises(CheckpointError):
        model_from_bytes(data.replace(b'"kind": "model"', b'"kind": "other"'))


def test_pack_unpack_arrays_exactly():
    rng = np.random.default_rng(0)
    arrays = {"x": rng.normal(size=(3, 4)), "y": np.array([np.pi]), "z": np.zeros((0, 2))}
    kind, meta, out = unpack(pack("k", {"m": 1}, arrays))
    assert kind == "k" and meta == {"m": 1}
    for k, v in arrays.items():
        assert out[k].shape == v.shape and out[k].tobytes() == v.tobytes()


def test_potentials_round_trip(tmp_path):
    gen = torch.Generator().manual_seed(0)
    f, g = (random_params(IcnnSpec(2, (3, 3)), gen) for _ in range(2))
    save_potentials(tmp_path / "p.bin", f, g, {"source": "s"})
    f2, g2, meta = load_potentials(tmp_path / "p.bin")
    assert meta["source"] == "s"
    assert all(torch.equal(f[k], f2[k]) and torch.equal(g[k], g2[k]) for k in f.tensors)
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "p.bin")


def test_atomic_write_leaves_no_temp_files(tiny, tmp_path):
    save_model(tiny(), tmp_path / "sub" / "m.ckpt")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["m.ckpt"]
