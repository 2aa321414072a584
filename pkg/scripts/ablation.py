"""Ablation of RealMLP-TD components on one synthetic task.

Each variant switches off a single component through configuration
overrides and reports the mean test error over a few splits.

    python scripts/ablation.py --task classification --splits 3 --epochs 64
"""

import argparse

import numpy as np

from realmlp import bench
from realmlp.config import default_preset, preset
from realmlp.dataio import from_arrays, make_split
from realmlp.train import predict, train

VARIANTS = {
    "full": {},
    "no numeric embeddings": {"num_embeddings": "none"},
    "no scaling layer": {"scaling_layer": False},
    "no parametric activation": {"param_act": False},
    "relu": {"activation": "relu"},
    "no dropout": {"dropout": 0.0},
    "no weight decay": {"wd": 0.0},
    "simple init": {"init": "simple"},
    "constant lr": {"lr_schedule": "constant"},
    "beta2 0.999": {"beta2": 0.999},
}


def make_data(task, seed):
    g = np.random.default_rng(seed)
    x = g.normal(size=(1200, 6))
    signal = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2] + 0.5 * np.abs(x[:, 3])
    if task == "classification":
        return from_arrays(x, (signal + 0.2 * g.normal(size=1200) > 0.5).astype(int), task)
    return from_arrays(x, signal + 0.1 * g.normal(size=1200), task)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", choices=["classification", "regression"], default="classification")
    ap.add_argument("--splits", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = make_data(args.task, args.seed)
    base = preset(default_preset(args.task)).replace(epochs=args.epochs)
    metric = "error" if args.task == "classification" else "nRMSE"
    print(f"{'variant':26s} mean test {metric}")
    for name, overrides in VARIANTS.items():
        cfg = base.replace(**overrides)
        errs = []
        for split in range(args.splits):
            s = make_split(data.n_rows, args.seed + split)
            tm, _ = train(data, s.train, s.val, cfg, seed=split)
            pred = predict(tm, data, s.test)
            if args.task == "classification":
                errs.append(bench.classification_error(data.y[s.test], np.argmax(pred, axis=1)))
            else:
                errs.append(bench.nrmse(data.y[s.test], pred))
        print(f"{name:26s} {np.mean(errs):.4f}", flush=True)


if __name__ == "__main__":
    main()
