#!/usr/bin/env python3
"""Builds data/mnist-subset.tar.gz from the digits bundled in the `mnist` npm
package (10,000 MNIST samples, pixel values stored as byte/255 rounded to three
decimals, which is injective on 0..255).

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset.tar.gz

The split is stratified: 80% of each digit goes to train-*, the rest to t10k-*.
Output is deterministic for a fixed --seed.
"""

import argparse
import io
import json
import os
import random
import struct
import tarfile


def write_idx_images(images, rows, cols):
    out = io.BytesIO()
    out.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
    for img in images:
        out.write(bytes(img))
    return out.getvalue()


def write_idx_labels(labels):
    out = io.BytesIO()
    out.write(struct.pack(">II", 0x00000801, len(labels)))
    out.write(bytes(labels))
    return out.getvalue()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digits_dir")
    parser.add_argument("output")
    parser.add_argument("--seed", type=int, default=20221023)
    parser.add_argument("--train-fraction", type=float, default=0.8)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    train, test = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        samples = []
        for i in range(0, len(flat), 784):
            pixels = [int(round(v * 255.0)) for v in flat[i:i + 784]]
            assert all(0 <= p <= 255 for p in pixels)
            samples.append((pixels, digit))
        rng.shuffle(samples)
        cut = int(round(len(samples) * args.train_fraction))
        train.extend(samples[:cut])
        test.extend(samples[cut:])
    rng.shuffle(train)
    rng.shuffle(test)

    files = {
        "train-images-idx3-ubyte": write_idx_images([s[0] for s in train], 28, 28),
        "train-labels-idx1-ubyte": write_idx_labels([s[1] for s in train]),
        "t10k-images-idx3-ubyte": write_idx_images([s[0] for s in test], 28, 28),
        "t10k-labels-idx1-ubyte": write_idx_labels([s[1] for s in test]),
    }
    with tarfile.open(args.output, "w:gz") as tar:
        for name, payload in files.items():
            info = tarfile.TarInfo(name=f"mnist-subset/{name}")
            info.size = len(payload)
            info.mtime = 0
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(payload))
    print(f"train={len(train)} test={len(test)} -> {args.output}")


if __name__ == "__main__":
    main()
