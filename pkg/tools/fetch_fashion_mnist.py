"""Build the desk-scale FashionMNIST subset used by the acceptance suite.

The images come from the ``fashion-mnist`` npm package, which bundles all
70,000 28x28 images as JSON (one file per class).  That package does not
keep the official train/test division, so we draw a stratified subset:
the first ``--train-per-class`` images of every class form the training
set and the following ``--test-per-class`` the test set.  Both are shuffled
with a fixed seed and written as gzipped IDX files.

    python tools/fetch_fashion_mnist.py --out data/fashion_mnist
"""
import argparse
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from goalphs.data import Dataset, write_idx


def fetch(workdir):
    subprocess.run(["npm", "pack", "fashion-mnist@1.1.0", "--silent"], cwd=workdir, check=True)
    with tarfile.open(Path(workdir) / "fashion-mnist-1.1.0.tgz") as tar:
        tar.extractall(workdir)
    return Path(workdir) / "package" / "src" / "clothes"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/fashion_mnist")
    ap.add_argument("--train-per-class", type=int, default=1000)
    ap.add_argument("--test-per-class", type=int, default=200)
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parts = {"train": ([], []), "t10k": ([], [])}
    with tempfile.TemporaryDirectory() as tmp:
        clothes = fetch(tmp)
        for label in range(10):
            rows = json.loads((clothes / f"{label}.json").read_text())["data"]
            # class 0 carries two empty rows
            images = np.asarray([r for r in rows if len(r) == 784], dtype=np.uint8)
            cut = args.train_per_class
            for key, block in (("train", images[:cut]),
                               ("t10k", images[cut:cut + args.test_per_class])):
                parts[key][0].append(block)
                parts[key][1].append(np.full(len(block), label, dtype=np.int64))

    rng = np.random.default_rng(args.seed)
    for key, (imgs, labels) in parts.items():
        imgs, labels = np.concatenate(imgs), np.concatenate(labels)
        order = rng.permutation(len(labels))
        ds = Dataset(imgs[order].astype(np.float64) / 255.0, labels[order], 10, key)
        write_idx(ds, out / f"{key}-images-idx3-ubyte.gz", out / f"{key}-labels-idx1-ubyte.gz")
        print(f"{key}: {len(labels)} images -> {out}")


if __name__ == "__main__":
    main()
