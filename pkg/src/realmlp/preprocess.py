"""Robust scaling with smooth clipping, and categorical routing (binary/one-hot/embed)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from realmlp.dataio import MISSING, Dataset

CLIP = 3.0
# largest double below 3; keeps the bound strict once float rounding saturates
_BOUND = float(np.nextafter(CLIP, 0.0))


def smooth_clip(x):
    """x / sqrt(1 + (x/3)^2): odd, increasing, and bounded by 3 in absolute value."""
    r = np.asarray(x, dtype=np.float64) / CLIP
    # hypot avoids overflowing (x/3)^2 for huge inputs
    with np.errstate(invalid="ignore"):
        out = CLIP * r / np.hypot(1.0, r)
    out = np.where(np.isinf(r), CLIP * np.sign(r), out)
    return np.clip(out, -_BOUND, _BOUND)


@dataclass(frozen=True)
class FittedColumnScaler:
    q0: float
    q1_4: float
    q1_2: float
    q3_4: float
    q1: float
    s: float

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.s == 0.0:
            return np.zeros_like(x)
        x = np.where(np.isfinite(x), x, np.clip(np.nan_to_num(x, nan=self.q1_2), self.q0, self.q1))
        return smooth_clip(self.s * (x - self.q1_2))


def fit_column_scaler(values) -> FittedColumnScaler:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot fit a scaler on an empty column")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return FittedColumnScaler(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    q0, q1_4, q1_2, q3_4, q1 = (float(q) for q in np.quantile(finite, [0.0, 0.25, 0.5, 0.75, 1.0]))
    if q3_4 != q1_4:
        s = 1.0 / (q3_4 - q1_4)
    elif q1 != q0:
        s = 2.0 / (q1 - q0)
    else:
        s = 0.0
    return FittedColumnScaler(q0, q1_4, q1_2, q3_4, q1, s)


def transform_column(scaler: FittedColumnScaler, x):
    return scaler.transform(x)


@dataclass(frozen=True)
class CategoryPlan:
    """How one categorical column is fed to the network.

    ``known`` holds the training-set category codes (excluding missing), in
    code order. ``kind`` is "binary" (one +-1 column), "onehot" or "embed".
    """

    kind: str
    known: tuple[int, ...]

    @property
    def width(self) -> int:
        return {"binary": 1, "onehot": len(self.known), "embed": 0}[self.kind]

    def slot(self, codes):
        """0 for missing/unseen, else 1 + position of the code in ``known``."""
        codes = np.asarray(codes, dtype=np.int64)
        out = np.zeros(codes.shape, dtype=np.int64)
        for pos, code in enumerate(self.known):
            out[codes == code] = pos + 1
        return out

    def encode(self, codes) -> np.ndarray:
        slots = self.slot(codes)
        if self.kind == "binary":
            # first known category -> -1, second -> +1, missing -> 0
            return np.select([slots == 1, slots == 2], [-1.0, 1.0], 0.0)[:, None]
        if self.kind == "onehot":
            eye = np.vstack([np.zeros((1, len(self.known))), np.eye(len(self.known))])
            return eye[slots]
        raise ValueError("embedded columns have no numeric encoding")


def plan_column(codes, vocab: list[str], max_one_hot: Optional[int]) -> CategoryPlan:
    present = sorted({int(c) for c in np.unique(codes) if vocab[int(c)] != MISSING})
    k = len(present)
    if k <= 2:
        kind = "binary"
    elif max_one_hot is None or k <= max_one_hot:
        kind = "onehot"
    else:
        kind = "embed"
    return CategoryPlan(kind, tuple(present))


@dataclass(frozen=True)
class FittedPreprocessor:
    n_numerical: int
    plans: tuple[CategoryPlan, ...]
    scalers: tuple[FittedColumnScaler, ...]

    @property
    def out_width(self) -> int:
        return len(self.scalers)

    @property
    def embed_columns(self) -> list[int]:
        return [j for j, p in enumerate(self.plans) if p.kind == "embed"]

    @property
    def embed_cardinalities(self) -> list[int]:
        """Rows per embedding table (known categories + the missing row)."""
        return [len(self.plans[j].known) + 1 for j in self.embed_columns]

    def raw_numeric(self, x_num, x_cat) -> np.ndarray:
        blocks = [np.asarray(x_num, dtype=np.float64).reshape(len(x_cat), self.n_numerical)]
        for j, plan in enumerate(self.plans):
            if plan.kind != "embed":
                blocks.append(plan.encode(x_cat[:, j]))
        return np.hstack(blocks) if blocks else np.zeros((len(x_cat), 0))

    def transform(self, x_num, x_cat) -> tuple[np.ndarray, np.ndarray]:
        """Return (scaled numeric matrix, embedding slot codes).

        The first ``n_numerical`` numeric columns are the original numerical
        features; the rest are binary/one-hot encodings.
        """
        x_cat = np.asarray(x_cat, dtype=np.int64)
        raw = self.raw_numeric(x_num, x_cat)
        out = np.empty_like(raw)
        for c, sc in enumerate(self.scalers):
            out[:, c] = sc.transform(raw[:, c])
        codes = np.zeros((len(x_cat), len(self.embed_columns)), dtype=np.int64)
        for k, j in enumerate(self.embed_columns):
            codes[:, k] = self.plans[j].slot(x_cat[:, j])
        return out, codes

    def apply(self, data: Dataset, rows=None):
        if rows is None:
            return self.transform(data.x_num, data.x_cat)
        rows = np.asarray(rows)
        return self.transform(data.x_num[rows], data.x_cat[rows])

    def to_dict(self) -> dict:
        return {
            "n_numerical": self.n_numerical,
            "plans": [{"kind": p.kind, "known": list(p.known)} for p in self.plans],
            "scalers": [[sc.q0, sc.q1_4, sc.q1_2, sc.q3_4, sc.q1, sc.s] for sc in self.scalers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPreprocessor":
        return cls(
            int(d["n_numerical"]),
            tuple(CategoryPlan(p["kind"], tuple(int(c) for c in p["known"])) for p in d["plans"]),
            tuple(FittedColumnScaler(*map(float, s)) for s in d["scalers"]),
        )


def fit_preprocessor(data: Dataset, train_idx, max_one_hot: Optional[int] = 8) -> FittedPreprocessor:
    """Fit categorical plans and per-column scalers on the training rows only."""
    train_idx = np.asarray(train_idx)
    x_cat = data.x_cat[train_idx]
    plans = tuple(plan_column(x_cat[:, j], data.categories[j], max_one_hot)
                  for j in range(x_cat.shape[1]))
    pre = FittedPreprocessor(data.x_num.shape[1], plans, ())
    raw = pre.raw_numeric(data.x_num[train_idx], x_cat)
    scalers = tuple(fit_column_scaler(raw[:, c]) for c in range(raw.shape[1]))
    return FittedPreprocessor(pre.n_numerical, plans, scalers)
