#!/usr/bin/env python3
"""Build the checked-in MNIST 0/1 fixture under tests/data/.

The 5000-image MNIST subset bundled in the ``mlxtend`` wheel is the only
copy of real MNIST reachable through a plain PyPI mirror, so it is used as
the source.  Only digits 0 and 1 are kept (about 1000 images).

    python scripts/make_mnist_fixture.py            # downloads the wheel with pip
    python scripts/make_mnist_fixture.py --wheel path/to/mlxtend-*.whl
"""
import argparse
import gzip
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from vqnn.data import write_idx_images, write_idx_labels

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
OUT = Path(__file__).resolve().parent.parent / "tests" / "data"


def fetch_wheel(dest: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(dest), "mlxtend==0.24.0"],
                   check=True)
    return next(dest.glob("mlxtend-*.whl"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", type=Path)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(Path(tmp))
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    pixels, digits = table[:, :-1], table[:, -1]
    keep = np.isin(digits, (0, 1))
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out / "mnist01-images-idx3-ubyte.gz", pixels[keep].reshape(-1, 28, 28))
    write_idx_labels(args.out / "mnist01-labels-idx1-ubyte.gz", digits[keep])
    print(f"wrote {keep.sum()} images ({(digits[keep] == 0).sum()} zeros) to {args.out}")


if __name__ == "__main__":
    main()
