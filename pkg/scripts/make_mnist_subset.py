"""Build the 2000/1000 MNIST subset used by the scaled learning experiments.

The source is the 5000-image MNIST sample shipped inside the mlxtend wheel
(``mlxtend/data/data/mnist_5k.csv.gz``: 784 pixel columns in 0..255 followed
by the label). Fetch the wheel with::

    pip download --no-deps mlxtend==0.24.0 -d /tmp/mlx

then run::

    python3 scripts/make_mnist_subset.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/

A seeded stratified split writes gzipped IDX files
``mnist-subset-{train,test}-{images,labels}-idx{3,1}-ubyte.gz``.
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from fracspike.data_io import save_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_source(wheel: Path):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    arr = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    return arr[:, :-1].astype(np.uint8), arr[:, -1].astype(np.uint8)


def stratified_split(y, n_train, n_test, seed):
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    train, test = [], []
    for c in classes:
        idx = rng.permutation(np.flatnonzero(y == c))
        train.extend(idx[: n_train // len(classes)])
        test.extend(idx[n_train // len(classes) : (n_train + n_test) // len(classes)])
    return rng.permutation(train), rng.permutation(test)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    X, y = read_source(args.wheel)
    tr, te = stratified_split(y, args.train, args.test, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", tr), ("test", te)):
        save_idx(args.out / f"mnist-subset-{name}-images-idx3-ubyte.gz", X[idx].reshape(-1, 28, 28), compress=True)
        save_idx(args.out / f"mnist-subset-{name}-labels-idx1-ubyte.gz", y[idx], compress=True)
        print(f"{name}: {len(idx)} samples, class counts {np.bincount(y[idx]).tolist()}")


if __name__ == "__main__":
    main()
