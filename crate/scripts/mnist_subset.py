#!/usr/bin/env python3
"""Build the 2,000-digit MNIST subset shipped under data/mnist-subset.

Source: the `mnist` npm package (MIT, https://github.com/cazala/mnist), which
bundles 10,000 MNIST digits as JSON arrays of 784 floats in [0, 1].

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist-subset

The first 200 digits of each class are taken and interleaved 0..9 so any
prefix of the files stays class balanced.
"""
import json
import struct
import sys
from pathlib import Path

PER_CLASS = 200


def main(src: Path, dst: Path) -> None:
    digits = []
    for d in range(10):
        flat = json.loads((src / f"{d}.json").read_text())["data"]
        digits.append([flat[i * 784:(i + 1) * 784] for i in range(PER_CLASS)])
    images = bytearray()
    labels = bytearray()
    for i in range(PER_CLASS):
        for d in range(10):
            images.extend(min(255, max(0, round(v * 255))) for v in digits[d][i])
            labels.append(d)
    n = PER_CLASS * 10
    dst.mkdir(parents=True, exist_ok=True)
    (dst / "images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + images)
    (dst / "labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + labels)


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
