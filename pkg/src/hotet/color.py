"""Colour transfer: images as point clouds in the RGB cube."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bench import potential_map
from .embedder import EmpiricalDistribution
from .icnn import Potential
from .io import load_image
from .trainer import HotetModel, TrainConfig, finetune, pair_potentials, predict, train_multi, train_pair

DEFAULT_SUBSAMPLE = 1 << 14


@dataclass
class ImageDistribution:
    pixels: np.ndarray
    path: Optional[str] = None
    subsample: int = DEFAULT_SUBSAMPLE

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) image, got shape {self.pixels.shape}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")

    @classmethod
    def from_file(cls, path, subsample: int = DEFAULT_SUBSAMPLE) -> "ImageDistribution":
        return cls(load_image(path), str(path), subsample)

    @property
    def colors(self) -> np.ndarray:
        return self.pixels.reshape(-1, 3)

    def distribution(self, seed: int = 0) -> EmpiricalDistribution:
        cols = self.colors
        if len(cols) > self.subsample:
            idx = np.random.default_rng(seed).choice(len(cols), size=self.subsample, replace=False)
            cols = cols[idx]
        return EmpiricalDistribution.uniform(cols)


def recolor(potential: Potential, pixels: np.ndarray) -> np.ndarray:
    """Apply the gradient map of ``potential`` to every pixel and clamp to the RGB cube."""
    flat = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    return np.clip(potential_map(potential)(flat), 0.0, 1.0).reshape(pixels.shape)


def transfer_pair(source: ImageDistribution, target: ImageDistribution, cfg: TrainConfig,
                  model: Optional[HotetModel] = None):
    """Train on one pair; returns the model, recoloured source and recoloured target."""
    model = model or HotetModel(3, seed=cfg.seed)
    mu, nu = source.distribution(cfg.seed), target.distribution(cfg.seed + 1)
    train_pair(model, mu, nu, cfg)
    f, g = pair_potentials(model, mu, nu, cfg.embed_size, cfg.seed)
    return model, recolor(f, source.pixels), recolor(g, target.pixels)


def transfer_multi(sources: Sequence[ImageDistribution], target: ImageDistribution, cfg: TrainConfig,
                   model: Optional[HotetModel] = None):
    """Train many sources against one target; returns the model and recoloured sources."""
    model = model or HotetModel(3, seed=cfg.seed)
    dists = [s.distribution(cfg.seed + i) for i, s in enumerate(sources)]
    nu = target.distribution(cfg.seed + len(sources))
    train_multi(model, dists, nu, cfg)
    outs = [recolor(predict(model, d, cfg.embed_size, cfg.seed)[0], s.pixels) for d, s in zip(dists, sources)]
    return model, outs


def transfer_finetune(model: HotetModel, source: ImageDistribution, target: ImageDistribution,
                      steps: int, cfg: TrainConfig):
    """Warm-start from a multi-trained model with ``steps`` updates on a new source."""
    mu, nu = source.distribution(cfg.seed), target.distribution(cfg.seed + 1)
    tuned = finetune(model, mu, nu, steps, cfg)
    f, _ = predict(tuned, mu, cfg.embed_size, cfg.seed)
    return tuned, recolor(f, source.pixels)


def synthetic_image(size: int = 256, seed: int = 0) -> np.ndarray:
    """Smooth random colour field: a few Gaussian colour blobs over a tinted gradient."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    base = rng.uniform(0.1, 0.9, 3)
    slope = rng.uniform(-0.3, 0.3, (2, 3))
    img = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    for _ in range(4):
        c = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.3)
        w = np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * r * r))[..., None]
        img = img * (1 - w) + rng.uniform(0, 1, 3) * w
    img += rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)
