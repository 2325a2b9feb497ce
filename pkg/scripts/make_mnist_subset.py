#!/usr/bin/env python3
"""Write a desk-scale MNIST subset as gzipped IDX files.

The source is the 5,000-digit MNIST sample that ships inside the mlxtend
wheel (``mlxtend/data/data/mnist_5k.csv.gz``), so no network fetch is
needed.  The sample is split stratified into 4,000 training and 1,000 test
digits and written as

    <out>/train-images-idx3-ubyte.gz   <out>/train-labels-idx1-ubyte.gz
    <out>/t10k-images-idx3-ubyte.gz    <out>/t10k-labels-idx1-ubyte.gz

Usage:
    pip install mlxtend
    python scripts/make_mnist_subset.py --out data/mnist
"""

import argparse
import os

import numpy as np

from fedsim.data import encode_idx_images, encode_idx_labels, gzip_bytes, stratified_indices


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--test-size", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=20220101)
    args = parser.parse_args()

    from mlxtend.data import mnist_data

    X, y = mnist_data()
    images = X.reshape(-1, 28, 28).astype(np.uint8)
    labels = y.astype(np.uint8)

    test_idx = stratified_indices(labels, 10, args.test_size, args.seed)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[test_idx] = False
    train_idx = np.flatnonzero(mask)

    os.makedirs(args.out, exist_ok=True)
    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        blobs = {
            f"{prefix}-images-idx3-ubyte.gz": encode_idx_images(images[idx]),
            f"{prefix}-labels-idx1-ubyte.gz": encode_idx_labels(labels[idx]),
        }
        for name, raw in blobs.items():
            with open(os.path.join(args.out, name), "wb") as fh:
                fh.write(gzip_bytes(raw))
        print(f"{prefix}: {idx.size} digits, per class {np.bincount(labels[idx], minlength=10).tolist()}")


if __name__ == "__main__":
    main()
