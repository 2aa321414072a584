"""Small benchmark on synthetic tasks: TD vs TD-S vs a linear model.

Trains each method on a few generated classification datasets over several
random splits, writes the error table, and prints the shifted geometric
mean with 95% confidence bounds plus the win-rate matrix.

    python scripts/synthetic_benchmark.py --splits 3 --epochs 64 --out bench_errors.csv
"""

import argparse
import csv

import numpy as np

from realmlp import bench
from realmlp.config import preset
from realmlp.dataio import from_arrays, make_split
from realmlp.train import predict, train


def datasets(seed):
    g = np.random.default_rng(seed)
    x = g.uniform(-1, 1, (800, 2))
    yield "xor", x, ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(int)
    x = g.normal(size=(800, 6))
    yield "linear", x, (x @ g.normal(size=6) + 0.3 * g.normal(size=800) > 0).astype(int)
    x = g.normal(size=(800, 4))
    yield "rings", x, (np.linalg.norm(x[:, :2], axis=1) > 1.2).astype(int)
    x = g.normal(size=(800, 5))
    y = np.digitize(np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2], [-0.5, 0.5])
    yield "three_class", x, y


def methods(epochs):
    yield "RealMLP-TD", preset("td-class").replace(epochs=epochs)
    yield "RealMLP-TD-S", preset("tds-class").replace(epochs=epochs)
    yield "linear", preset("tds-class").replace(epochs=epochs, hidden_sizes=(), param_act=False)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--splits", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="bench_errors.csv")
    args = ap.parse_args()

    rows = []
    for name, x, y in datasets(args.seed):
        data = from_arrays(x, y, "classification")
        for split in range(args.splits):
            s = make_split(data.n_rows, args.seed + split)
            for method, cfg in methods(args.epochs):
                tm, _ = train(data, s.train, s.val, cfg, seed=split)
                err = bench.classification_error(data.y[s.test], np.argmax(predict(tm, data, s.test), axis=1))
                rows.append((method, name, split, err))
                print(f"{name:12s} split {split} {method:14s} {err:.4f}", flush=True)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "dataset", "split", "error"])
        w.writerows(rows)
    table = bench.read_errors(args.out)
    print("\nshifted geometric mean (eps=0.01) with 95% CI")
    for r in bench.report(table, "sgm", ci=True):
        print(f"  {r['method']:14s} {r['score']:.4f}  [{r['lower']:.4f}, {r['upper']:.4f}]")
    print("\nwin rates (%) of row method against column method")
    for r in bench.winrate_rows(table):
        print("  " + r["method"].ljust(14) + " ".join(f"{r[m]:6.1f}" for m in table.methods))


if __name__ == "__main__":
    main()
