#!/usr/bin/env python3
"""Write the 5000-image MNIST sample shipped inside the mlxtend wheel as IDX files.

Usage: mnist_subset.py [--wheel PATH] [--out data/mnist]

Without --wheel the wheel is fetched with `pip download`. The images are
shuffled with a fixed seed and split 4500/500 into the usual train/t10k names.
"""
import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import tempfile
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run(
        ["pip", "download", "--no-deps", "--timeout", "120", "-d", dest, "mlxtend==0.24.0"],
        check=True,
    )
    return glob.glob(os.path.join(dest, "mlxtend-*.whl"))[0]


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test", type=int, default=500)
    args = ap.parse_args()

    wheel = args.wheel or fetch_wheel(tempfile.mkdtemp())
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    x, y = table[:, :-1], table[:, -1]
    assert x.shape[1] == 784 and x.min() >= 0 and x.max() <= 255

    order = np.random.default_rng(0).permutation(len(y))
    x, y = x[order], y[order]
    n_test = args.test
    os.makedirs(args.out, exist_ok=True)
    write_images(os.path.join(args.out, "train-images-idx3-ubyte"), x[:-n_test])
    write_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), y[:-n_test])
    write_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), x[-n_test:])
    write_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), y[-n_test:])
    print(f"wrote {len(y) - n_test} train / {n_test} test images to {args.out}")


if __name__ == "__main__":
    main()
