"""Plain-text distribution files and RGB image loading."""

from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import atomic_write
from .embedder import EmpiricalDistribution

log = logging.getLogger(__name__)


def read_distribution(path) -> EmpiricalDistribution:
    """Header ``n d`` then ``n`` rows of ``d`` coordinates, optionally followed by a mass."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty distribution file")
    try:
        n, d = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: header must be 'n d'") from exc
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1:]]
    if len(rows) != n:
        raise ValueError(f"{path}: header says {n} rows, found {len(rows)}")
    widths = {len(r) for r in rows}
    if widths == {d}:
        return EmpiricalDistribution.uniform(np.stack(rows))
    if widths == {d + 1}:
        arr = np.stack(rows)
        return EmpiricalDistribution(arr[:, :d], arr[:, d])
    raise ValueError(f"{path}: rows must have {d} or {d + 1} columns")


def write_distribution(path, dist: EmpiricalDistribution, with_weights: bool = True) -> None:
    lines = [f"{dist.n} {dist.dim}"]
    for p, w in zip(dist.points, dist.weights):
        vals = list(p) + ([w] if with_weights else [])
        lines.append(" ".join(repr(float(v)) for v in vals))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def load_image(path) -> np.ndarray:
    """RGB image as an (H, W, 3) float array with values in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    if img.mode == "RGBA":
        log.warning("%s: dropping alpha channel", path)
        img = img.convert("RGB")
    elif img.mode == "P":
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise ValueError(f"{path}: expected 3 colour channels, image mode is {img.mode}")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_image(path, pixels: np.ndarray) -> None:
    arr = np.clip(pixels, 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    atomic_write(path, buf.getvalue())
