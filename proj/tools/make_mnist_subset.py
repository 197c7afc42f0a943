#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert the 10k-digit MNIST subset shipped in the npm `mnist` package
(MIT licensed, https://www.npmjs.com/package/mnist) into IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/

Pixels in the package are stored as floats in [0, 1] with three decimals;
they are mapped back to bytes with round(v * 255). Samples are interleaved
by digit in a fixed order so the output is reproducible.
"""
import json
import os
import struct
import sys
import tarfile


def main():
    if len(sys.argv) != 3:
        print(__doc__)
        return 1
    src, out = sys.argv[1], sys.argv[2]
    per_digit = []
    for d in range(10):
        with open(os.path.join(src, f"{d}.json")) as f:
            flat = json.load(f)["data"]
        n = len(flat) // 784
        per_digit.append([flat[i * 784:(i + 1) * 784] for i in range(n)])

    images, labels = [], []
    cursor = [0] * 10
    remaining = sum(len(p) for p in per_digit)
    while remaining:
        for d in range(10):
            if cursor[d] < len(per_digit[d]):
                images.append(per_digit[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1
                remaining -= 1

    os.makedirs(out, exist_ok=True)
    img_path = os.path.join(out, "mnist10k-images-idx3-ubyte")
    lbl_path = os.path.join(out, "mnist10k-labels-idx1-ubyte")
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(max(0, min(255, round(v * 255))) for v in img))
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    with tarfile.open(os.path.join(out, "mnist10k.tar.gz"), "w:gz") as tar:
        tar.add(img_path, arcname=os.path.basename(img_path))
        tar.add(lbl_path, arcname=os.path.basename(lbl_path))
    os.remove(img_path)
    os.remove(lbl_path)
    print(f"wrote {len(images)} samples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
