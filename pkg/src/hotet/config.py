"""Run configuration: JSON files layered over built-in presets.

The ``full`` preset carries the full training scale (learning rate
1e-3, 5000 iterations, sample batch 1024 up to d=16 and 256 above,
8 distributions per step, 500/100 train/test mixtures).  ``desk`` shrinks
iteration counts and suite sizes so a run fits on one CPU core.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Optional

from .solvers import SolverConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


FULL = {
    "seed": 0,
    "dims": [2, 4, 8, 16, 32, 64],
    "model": {"ctx_dim": 128, "blocks": 3, "heads": 4, "head_dim": 16, "ffn_dim": 128,
              "hyper_hidden": [256, 256]},
    "train": {"iterations": 5000, "lr": 1e-3, "sample_batch": None, "dist_batch": 8, "embed_size": 256},
    "solver": {"kind": "mmb", "inner_iters": 5},
    "baseline": {"iterations": 5000, "sample_batch": 1024},
    "suite": {"n_train": 500, "n_test": 100, "samples_per_dist": 4096, "target_samples": 16384,
              "potential_scale": 0.5},
    "eval": {"n_eval": 4096},
    "color": {"subsample": 16384, "finetune_steps": 50},
}

DESK = {
    "dims": [2],
    "train": {"iterations": 1000, "sample_batch": 512, "embed_size": 128},
    "baseline": {"iterations": 1000},
    "suite": {"n_train": 50, "n_test": 10, "samples_per_dist": 2048, "target_samples": 8192},
    "eval": {"n_eval": 2048},
}

PRESETS = {"full": {}, "desk": DESK}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve(overrides: Optional[dict] = None) -> dict:
    overrides = dict(overrides or {})
    preset = overrides.pop("preset", "full")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = _merge(_merge(FULL, PRESETS[preset]), overrides)
    validate(cfg)
    return cfg


def load(path=None, **overrides) -> dict:
    raw = {}
    if path is not None and str(path) in PRESETS and not Path(path).exists():
        raw = {"preset": str(path)}
    elif path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = resolve(raw)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if not cfg["dims"] or any(int(d) < 1 for d in cfg["dims"]):
        raise ConfigError("dims must be a non-empty list of positive integers")
    t = cfg["train"]
    if t["iterations"] < 0 or t["lr"] <= 0 or t["dist_batch"] < 1 or t["embed_size"] < 1:
        raise ConfigError("train: iterations >= 0, lr > 0, dist_batch >= 1, embed_size >= 1 required")
    if cfg["solver"]["kind"] not in ("mmb", "mmv2"):
        raise ConfigError(f"solver.kind must be 'mmb' or 'mmv2', got {cfg['solver']['kind']!r}")
    s = cfg["suite"]
    if s["n_train"] < 1 or s["n_test"] < 0:
        raise ConfigError("suite: n_train >= 1 and n_test >= 0 required")


def sample_batch(cfg: dict, d: int) -> int:
    b = cfg["train"]["sample_batch"]
    if b is None:
        return 1024 if d <= 16 else 256
    return int(b)


def train_config(cfg: dict, d: int, solver: Optional[str] = None) -> TrainConfig:
    t = cfg["train"]
    sc = SolverConfig(kind=solver or cfg["solver"]["kind"], batch_size=sample_batch(cfg, d),
                      inner_iters=cfg["solver"]["inner_iters"], lr=t["lr"], iterations=t["iterations"])
    return TrainConfig(iterations=t["iterations"], dist_batch=t["dist_batch"], sample_batch=sample_batch(cfg, d),
                       embed_size=t["embed_size"], lr=t["lr"], seed=cfg["seed"], solver=sc)
