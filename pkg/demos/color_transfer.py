"""Recolour one image with the palette of another.

Pixels are points in the RGB cube; the fitted forward map moves the source
colours onto the target colour distribution and is then applied to every
pixel.  Without image arguments two synthetic images are generated.
"""

import argparse
from pathlib import Path

import numpy as np

from hotet.color import ImageDistribution, synthetic_image, transfer_pair
from hotet.io import save_image
from hotet.solvers import SolverConfig
from hotet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", help="PNG to recolour")
    ap.add_argument("--target", help="PNG providing the palette")
    ap.add_argument("--iterations", type=int, default=400)
    ap.add_argument("--out", default="color_demo")
    args = ap.parse_args()

    out = Path(args.out)
    if args.source and args.target:
        source, target = ImageDistribution.from_file(args.source), ImageDistribution.from_file(args.target)
    else:
        source, target = ImageDistribution(synthetic_image(256, 1)), ImageDistribution(synthetic_image(256, 2))
        save_image(out / "source.png", source.pixels)
        save_image(out / "target.png", target.pixels)

    cfg = TrainConfig(iterations=args.iterations, sample_batch=1024, solver=SolverConfig("mmb"))
    _, fwd, inv = transfer_pair(source, target, cfg)
    save_image(out / "source_recolored.png", fwd)
    save_image(out / "target_recolored.png", inv)
    print("channel means  source", np.round(source.colors.mean(0), 3),
          " recoloured", np.round(fwd.reshape(-1, 3).mean(0), 3),
          " target", np.round(target.colors.mean(0), 3))
    print(f"images written to {out}/")


if __name__ == "__main__":
    main()
