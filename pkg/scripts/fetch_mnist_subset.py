"""Write a 5000-image MNIST subset (500 per digit) as gzipped IDX files.

The images come from the CSV bundled with the ``mlxtend`` wheel, which is
fetched with ``pip download``. Usage:

    python scripts/fetch_mnist_subset.py [--out data/]
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

from pckid.harness.idx import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "data", type=Path)
    ap.add_argument("--wheel", type=Path, help="use an already downloaded mlxtend wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend==0.24.0"],
                check=True,
            )
            wheel = next(Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(images, args.out / "mnist5k-images-idx3-ubyte.gz")
    write_idx(labels, args.out / "mnist5k-labels-idx1-ubyte.gz")
    counts = np.bincount(labels, minlength=10)
    print(f"wrote {len(labels)} images to {args.out} (per digit: {counts.tolist()})")


if __name__ == "__main__":
    main()
