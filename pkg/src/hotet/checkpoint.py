"""Checkpoint container.

Layout::

    HOTET-CHECKPOINT\\n
    <one line of JSON: version, kind, metadata, array table>\\n
    <little-endian float64 arrays, back to back>

The array table lists name, shape and byte offset (relative to the start of
the data section) for every array, in the order they are written.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .diffcore import DTYPE
from .icnn import IcnnParams, IcnnSpec
from .trainer import HotetModel

MAGIC = b"HOTET-CHECKPOINT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"version": FORMAT_VERSION, "kind": kind, "meta": meta, "arrays": table}
    return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)


def unpack(data: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic line)")
    rest = data[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(rest[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}; this build reads version {FORMAT_VERSION}")
    body = rest[nl + 1:]
    arrays = {}
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(body):
            raise CheckpointError(f"array {entry['name']} runs past the end of the file")
        arrays[entry["name"]] = np.frombuffer(body[start:start + n], dtype="<f8").reshape(entry["shape"]).copy()
    return header["kind"], header["meta"], arrays


def model_bytes(model: HotetModel, config: Optional[dict] = None) -> bytes:
    meta = {"topology": model.topology, "mode": model.mode, "ablated": model.ablated, "config": config or {}}
    arrays = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    return pack("model", meta, arrays)


def save_model(model: HotetModel, path, config: Optional[dict] = None) -> None:
    atomic_write(path, model_bytes(model, config))


def model_from_bytes(data: bytes) -> tuple[HotetModel, dict]:
    kind, meta, arrays = unpack(data)
    if kind != "model":
        raise CheckpointError(f"expected a model checkpoint, found {kind!r}")
    topo = dict(meta["topology"])
    spec = IcnnSpec.from_dict(topo.pop("spec"))
    model = HotetModel(spec=spec, **topo)
    if meta["ablated"]:
        model.const_context = nn.Parameter(torch.zeros(1, model.embedder.ctx_dim, dtype=DTYPE))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise CheckpointError(f"checkpoint arrays do not match the model topology: {sorted(missing)}")
    model.load_state_dict(state)
    model.mode = meta["mode"]
    return model, meta.get("config", {})


def load_model(path) -> tuple[HotetModel, dict]:
    return model_from_bytes(Path(path).read_bytes())


def save_potentials(path, forward: IcnnParams, inverse: IcnnParams, meta: Optional[dict] = None) -> None:
    arrays = {f"fwd.{k}": v.detach().numpy() for k, v in forward.tensors.items()}
    arrays.update({f"inv.{k}": v.detach().numpy() for k, v in inverse.tensors.items()})
    atomic_write(path, pack("potentials", {"spec": forward.spec.to_dict(), **(meta or {})}, arrays))


def load_potentials(path) -> tuple[IcnnParams, IcnnParams, dict]:
    kind, meta, arrays = unpack(Path(path).read_bytes())
    if kind != "potentials":
        raise CheckpointError(f"expected a potentials file, found {kind!r}")
    spec = IcnnSpec.from_dict(meta["spec"])
    out = []
    for side in ("fwd", "inv"):
        out.append(IcnnParams(spec, {k.split(".", 1)[1]: torch.from_numpy(v) for k, v in arrays.items()
                                     if k.startswith(side + ".")}))
    return out[0], out[1], meta
