#!/usr/bin/env python3
"""Build the desk-scale MNIST subset as gzipped IDX files.

Source: the `mnist` npm package (MIT), which bundles 10 000 MNIST digits as
JSON arrays of intensities rounded to three decimals. Intensities are mapped
back to bytes with round(v * 255), which is exact for that rounding.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_desk_subset.py package/src/digits data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 5000
TEST = 1000
SEED = 20210210


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(len(flat) // 784):
            pixels = bytes(round(v * 255) for v in flat[i * 784:(i + 1) * 784])
            samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    for name, chunk in (("train", samples[:TRAIN]), ("t10k", samples[TRAIN:TRAIN + TEST])):
        images = struct.pack(">IIII", 0x803, len(chunk), 28, 28) + b"".join(p for p, _ in chunk)
        labels = struct.pack(">II", 0x801, len(chunk)) + bytes(l for _, l in chunk)
        # mtime=0 keeps the archives byte-reproducible
        for suffix, payload in (("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)):
            with open(dst / f"{name}-{suffix}.gz", "wb") as raw:
                with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
                    gz.write(payload)


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
