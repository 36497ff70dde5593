#!/usr/bin/env python3
"""Write grayscale PGM crops of the scikit-image sample images.

Train and test crops come from disjoint source images.

    python3 tools/make_denoise_corpus.py data/denoise [--size 64] [--train 100] [--test 25]
"""

import argparse
from pathlib import Path

import numpy as np
from skimage import color, data, img_as_ubyte

TRAIN_SOURCES = ["astronaut", "camera", "coffee", "rocket", "immunohistochemistry", "moon", "grass", "brick", "coins"]
TEST_SOURCES = ["chelsea", "clock", "gravel"]


def gray(name):
    im = getattr(data, name)()
    if im.ndim == 3:
        im = color.rgb2gray(im[..., :3])
    return img_as_ubyte(im)


def write_pgm(path, im):
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (im.shape[1], im.shape[0]))
        f.write(np.ascontiguousarray(im, dtype=np.uint8).tobytes())


def crops(sources, count, size, rng):
    images = [gray(n) for n in sources]
    out = []
    for i in range(count):
        im = images[i % len(images)]
        y = rng.integers(0, im.shape[0] - size + 1)
        x = rng.integers(0, im.shape[1] - size + 1)
        out.append((sources[i % len(images)], im[y:y + size, x:x + size]))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--train", type=int, default=100)
    ap.add_argument("--test", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    for split, sources, count in (("train", TRAIN_SOURCES, args.train), ("test", TEST_SOURCES, args.test)):
        d = args.out / split
        d.mkdir(parents=True, exist_ok=True)
        for old in d.glob("*.pgm"):
            old.unlink()
        for i, (name, im) in enumerate(crops(sources, count, args.size, rng)):
            write_pgm(d / f"{i:03d}_{name}.pgm", im)


if __name__ == "__main__":
    main()
