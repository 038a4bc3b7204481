"""Convert the 10k-digit JSON corpus of the npm ``mnist`` package into IDX files.

Usage: python3 scripts/build_mnist10k.py <package>/src/digits data/mnist10k

Each ``<digit>.json`` holds ``{"data": [...]}`` with 784 grey levels per image,
stored as ``value / 255`` rounded to three decimals; rounding ``value * 255``
recovers the original bytes.  Images are interleaved by a fixed permutation so
any prefix is roughly class-balanced.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from convexinit.training import write_idx  # noqa: E402


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        pix = np.rint(flat * 255.0).reshape(-1, 28, 28)
        if pix.min() < 0 or pix.max() > 255:
            raise ValueError(f"digit {digit}: values outside [0, 255]")
        images.append(pix.astype(np.uint8))
        labels.append(np.full(pix.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.Generator(np.random.Philox(20200601)).permutation(labels.size)
    os.makedirs(dst, exist_ok=True)
    write_idx(
        images[order],
        labels[order],
        os.path.join(dst, "images-idx3-ubyte.gz"),
        os.path.join(dst, "labels-idx1-ubyte.gz"),
    )
    print(f"wrote {labels.size} images to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
