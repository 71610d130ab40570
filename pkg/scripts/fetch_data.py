"""Populate ``data/`` with the datasets reachable through the package index.

MUTAG ships as TU-format test data inside the ``grakel`` wheel, and a
5000-image MNIST sample ships inside the ``mlxtend`` wheel (CSV, 784 pixel
columns followed by the label). The MNIST sample is rewritten as gzipped
IDX files. PTC_FR, IMDB-BINARY and USPS are not distributed this way;
place them under ``data/`` by hand (TU directories ``data/PTC_FR`` and ``data/IMDB-BINARY``,
IDX files ``data/usps-{images-idx3,labels-idx1}-ubyte.gz``).

Usage: python scripts/fetch_data.py [--dest data]
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

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from hg2v.synth import write_idx  # noqa: E402


def download_wheel(spec: str, dest: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                    "-d", str(dest), spec], check=True, stdout=subprocess.DEVNULL)
    return next(dest.glob(spec.split("=")[0].replace("-", "_") + "*.whl"))


def fetch_mutag(tmp: Path, out: Path) -> None:
    whl = download_wheel("grakel==0.1.11", tmp)
    target = out / "MUTAG"
    target.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(whl) as z:
        for name in z.namelist():
            if name.startswith("grakel/tests/data/MUTAG/") and not name.endswith("/"):
                (target / Path(name).name).write_bytes(z.read(name))
    print(f"MUTAG -> {target}")


def fetch_mnist5k(tmp: Path, out: Path) -> None:
    whl = download_wheel("mlxtend==0.24.0", tmp)
    with zipfile.ZipFile(whl) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    arr = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    labels = arr[:, -1].astype(np.uint8)
    images = arr[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    write_idx(out / "mnist5k-images-idx3-ubyte.gz", images)
    write_idx(out / "mnist5k-labels-idx1-ubyte.gz", labels)
    print(f"MNIST sample ({len(labels)} images) -> {out}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default=str(ROOT / "data"))
    args = ap.parse_args()
    out = Path(args.dest)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as td:
        fetch_mutag(Path(td), out)
        fetch_mnist5k(Path(td), out)


if __name__ == "__main__":
    main()
