#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000
real MNIST training digits as JSON, with pixels stored as v/255 rounded to
three decimals; multiplying by 255 and rounding recovers the original bytes
exactly. The digits are split into 9,000 training and 1,000 held-out images
with a fixed seed and written as gzip-compressed IDX files.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/build_mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

SPLIT_SEED = 20190
HELD_OUT = 1000


def idx_images(pixels: np.ndarray) -> bytes:
    n = pixels.shape[0]
    return struct.pack(">IIII", 0x803, n, 28, 28) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", 0x801, len(labels)) + labels.astype(np.uint8).tobytes()


def write_gz(path: Path, payload: bytes) -> None:
    with open(path, "wb") as raw:
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            gz.write(payload)


def main(digits_dir: str, out_dir: str) -> None:
    images, labels = [], []
    for digit in range(10):
        flat = json.loads(Path(digits_dir, f"{digit}.json").read_text())["data"]
        arr = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
        restored = np.rint(arr * 255.0)
        assert np.abs(restored - arr * 255.0).max() < 0.5
        images.append(restored.astype(np.uint8))
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.RandomState(SPLIT_SEED).permutation(len(images))
    test_idx, train_idx = order[:HELD_OUT], order[HELD_OUT:]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gz(out / "train-images-idx3-ubyte.gz", idx_images(images[train_idx]))
    write_gz(out / "train-labels-idx1-ubyte.gz", idx_labels(labels[train_idx]))
    write_gz(out / "t10k-images-idx3-ubyte.gz", idx_images(images[test_idx]))
    write_gz(out / "t10k-labels-idx1-ubyte.gz", idx_labels(labels[test_idx]))
    print(f"train={len(train_idx)} test={len(test_idx)} -> {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
