#!/usr/bin/env python3
"""Builds data/fashion-subset.tar.gz from the Fashion-MNIST samples bundled in
the `fashion-mnist` npm package (70,000 images stored as raw 0..255 pixel
lists, 7,000 per class in src/clothes/<class>.json).

    npm pack fashion-mnist && tar xzf fashion-mnist-1.1.0.tgz
    python3 tools/make_fashion_subset.py package/src/clothes data/fashion-subset.tar.gz

Per class, malformed rows are dropped and exact duplicates removed (first
occurrence kept); the remaining samples are shuffled and the first
--train-per-class go to train-*, the next --test-per-class to t10k-*.
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
    parser.add_argument("clothes_dir")
    parser.add_argument("output")
    parser.add_argument("--seed", type=int, default=20221023)
    parser.add_argument("--train-per-class", type=int, default=800)
    parser.add_argument("--test-per-class", type=int, default=200)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    train, test = [], []
    for label in range(10):
        with open(os.path.join(args.clothes_dir, f"{label}.json")) as f:
            rows = [r for r in json.load(f)["data"] if len(r) == 784]
        seen, unique = set(), []
        for r in rows:
            key = tuple(r)
            if key not in seen:
                seen.add(key)
                unique.append(r)
        assert all(0 <= p <= 255 for r in unique for p in r)
        need = args.train_per_class + args.test_per_class
        assert len(unique) >= need, f"class {label}: only {len(unique)} samples"
        rng.shuffle(unique)
        train += [(r, label) for r in unique[:args.train_per_class]]
        test += [(r, label) for r in unique[args.train_per_class:need]]
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
            info = tarfile.TarInfo(name=f"fashion-subset/{name}")
            info.size = len(payload)
            info.mtime = 0
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(payload))
    print(f"train={len(train)} test={len(test)} -> {args.output}")


if __name__ == "__main__":
    main()
