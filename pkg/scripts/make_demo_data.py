#!/usr/bin/env python3
"""Generate small demo datasets for the CLI walkthrough.

Writes two labeled image trees:
  <out>/gratings/class_K/*.png   -- oriented-grating "identities"
  <out>/smooth/scene/*.png       -- smooth unlabeled test images
"""

import argparse
from pathlib import Path

from freqdp.image_io import save_image
from freqdp.synthetic import make_grating_images, make_smooth_images


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_data")
    parser.add_argument("--per-class", type=int, default=25)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--size", type=int, default=8)
    parser.add_argument("--smooth", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    imgs, labels = make_grating_images(
        args.per_class, args.classes, args.size, seed=args.seed
    )
    for i, (img, lab) in enumerate(zip(imgs, labels)):
        d = out / "gratings" / f"class_{lab}"
        d.mkdir(parents=True, exist_ok=True)
        save_image(img, d / f"{i:04d}.png")

    scene = out / "smooth" / "scene"
    scene.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(make_smooth_images(args.smooth, size=16,
                                               seed=args.seed + 1)):
        save_image(img, scene / f"{i:04d}.png")

    print(f"wrote {len(imgs)} grating images and {args.smooth} smooth images "
          f"under {out}")


if __name__ == "__main__":
    main()
