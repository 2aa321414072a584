import numpy as np
import pytest

from realmlp.dataio import DatasetSchema, from_arrays


def xor_data(n=400, seed=0, noise=0.0):
    g = np.random.default_rng(seed)
    x = g.uniform(-1, 1, size=(n, 2))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.int64)
    if noise:
        flip = g.random(n) < noise
        y[flip] = 1 - y[flip]
    return from_arrays(x, y, "classification")


def smooth_regression(n=300, seed=0, n_features=3):
    g = np.random.default_rng(seed)
    x = g.normal(size=(n, n_features))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] ** 2 - 0.3 * x[:, -1]
    return from_arrays(x, y, "regression")


def mixed_data(n=200, seed=0, task="classification"):
    """Numeric columns plus a binary, a one-hot and an embedded categorical column."""
    g = np.random.default_rng(seed)
    x = g.normal(size=(n, 3))
    cats = np.stack([g.integers(0, 2, n), g.integers(0, 5, n), g.integers(0, 12, n)], axis=1)
    score = x[:, 0] + (cats[:, 1] == 2) - 0.5 * (cats[:, 2] % 3 == 0)
    y = (score > 0).astype(np.int64) if task == "classification" else score
    return from_arrays(x, y, task, x_cat=cats, n_categories=[2, 5, 12])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def csv_dir(tmp_path):
    """A small mixed-type classification CSV + schema written to disk."""
    g = np.random.default_rng(3)
    n = 120
    x = g.normal(size=(n, 2))
    col = g.choice(list("abcdefghijk"), n)
    flag = g.choice(["u", "v"], n)
    y = np.where(x[:, 0] + (col < "f") > 0.5, "yes", "no")
    lines = ["f1,f2,kind,flag,label"]
    lines += [f"{float(x[i, 0])!r},{float(x[i, 1])!r},{col[i]},{flag[i]},{y[i]}" for i in range(n)]
    (tmp_path / "data.csv").write_text("\n".join(lines) + "\n")
    schema = DatasetSchema((("f1", "num"), ("f2", "num"), ("kind", "cat"), ("flag", "cat"),
                            ("label", "target")), "classification")
    schema.write(tmp_path / "schema.txt")
    g2 = np.random.default_rng(4)
    xr = g2.normal(size=(n, 2))
    yr = np.sin(xr[:, 0]) + xr[:, 1]
    lines = ["f1,f2,kind,target"] + [f"{float(xr[i, 0])!r},{float(xr[i, 1])!r},{col[i]},{float(yr[i])!r}" for i in range(n)]
    (tmp_path / "reg.csv").write_text("\n".join(lines) + "\n")
    DatasetSchema((("f1", "num"), ("f2", "num"), ("kind", "cat"), ("target", "target")),
                  "regression").write(tmp_path / "reg_schema.txt")
    return tmp_path
