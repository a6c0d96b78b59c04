#!/usr/bin/env python3
"""Write the 5,000-image MNIST training subset shipped with mlxtend as IDX files.

Usage: make_mnist_subset.py [OUT_DIR]

The subset (500 images per digit) lives in mlxtend's wheel as
mlxtend/data/data/mnist_5k.csv.gz, one row per image: 784 pixel values
followed by the label. The wheel is fetched with `pip download` when it is
not already importable.
"""
import glob
import gzip
import importlib.util
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_bytes():
    spec = importlib.util.find_spec("mlxtend")
    if spec is not None and spec.submodule_search_locations:
        path = os.path.join(spec.submodule_search_locations[0], "data", "data", "mnist_5k.csv.gz")
        if os.path.exists(path):
            with open(path, "rb") as fh:
                return fh.read()
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend"],
                       check=True)
        wheel = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]
        with zipfile.ZipFile(wheel) as zf:
            return zf.read(CSV_MEMBER)


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "mnist-5k")
    os.makedirs(out_dir, exist_ok=True)
    rows = gzip.decompress(read_csv_bytes()).decode().strip().splitlines()
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        assert len(values) == 785
        pixels.extend(values[:784])
        labels.append(values[784])
    count = len(rows)
    with open(os.path.join(out_dir, "train-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        fh.write(pixels)
    with open(os.path.join(out_dir, "train-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, count))
        fh.write(labels)
    print(f"wrote {count} images to {out_dir}")


if __name__ == "__main__":
    main()
