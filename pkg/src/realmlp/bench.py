"""Per-split metrics and benchmark aggregation statistics.

Errors are organized as arrays of shape (n_datasets, n_splits) per method,
with dataset weights summing to one.
"""

from __future__ import annotations

import csv
import functools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

# -- per-split metrics ---------------------------------------------------------


def classification_error(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    return float(np.mean(y_true != np.asarray(y_pred)))


def rmse(y_true, y_pred) -> float:
    d = np.asarray(y_true, dtype=np.float64) - np.asarray(y_pred, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def nrmse(y_true, y_pred, std: Optional[float] = None) -> float:
    """RMSE divided by the population std of ``y_true`` (or by ``std`` if given)."""
    y_true = np.asarray(y_true, dtype=np.float64)
    if std is None:
        std = float(np.sqrt(np.mean((y_true - y_true.mean()) ** 2)))
    if not std > 0:
        raise ValueError("nRMSE is undefined for constant targets")
    return rmse(y_true, y_pred) / std


def cross_entropy(y_true, probs) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    p = probs[np.arange(len(probs)), np.asarray(y_true, dtype=np.int64)]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def midranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_binary(positive, scores) -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative samples")
    r = midranks(scores)
    return float((r[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc_ovr(y_true, probs) -> float:
    """Macro average over classes of one-vs-rest AUROC.

    Classes absent from ``y_true`` are skipped. A 1-d ``probs`` is taken as the
    positive-class score of a binary problem.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return auroc_binary(y_true == 1, probs)
    aucs = [auroc_binary(y_true == k, probs[:, k]) for k in range(probs.shape[1])
            if 0 < np.sum(y_true == k) < len(y_true)]
    if not aucs:
        raise ValueError("AUROC needs at least two classes present")
    return float(np.mean(aucs))


# -- error matrices ------------------------------------------------------------


@dataclass
class ErrorTable:
    """Errors of several methods on the same (dataset, split) grid."""

    methods: list[str]
    datasets: list[str]
    errors: np.ndarray  # (n_methods, n_datasets, n_splits)
    weights: np.ndarray  # (n_datasets,)

    def of(self, method: str) -> np.ndarray:
        return self.errors[self.methods.index(method)]


def group_weights(groups: Sequence) -> np.ndarray:
    """Weights inversely proportional to each dataset's group size, normalized to sum 1."""
    groups = list(groups)
    if not groups:
        raise ValueError("no datasets")
    sizes = defaultdict(int)
    for g in groups:
        sizes[g] += 1
    w = np.array([1.0 / sizes[g] for g in groups])
    return w / w.sum()


def _weights(err: np.ndarray, weights) -> np.ndarray:
    if weights is None:
        return np.full(err.shape[0], 1.0 / err.shape[0])
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (err.shape[0],):
        raise ValueError("need one weight per dataset")
    if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9) or np.any(w < 0):
        raise ValueError("weights must be non-negative and sum to 1")
    return w


def _as_matrix(err) -> np.ndarray:
    err = np.asarray(err, dtype=np.float64)
    if err.ndim == 1:
        err = err[:, None]
    if err.ndim != 2 or err.size == 0:
        raise ValueError("errors must be a non-empty (datasets, splits) matrix")
    if np.any(err < 0) or not np.all(np.isfinite(err)):
        raise ValueError("errors must be finite and non-negative")
    return err


def split_scores(err, weights=None, eps: float = 0.01) -> np.ndarray:
    """Per-split dataset aggregates sum_i w_i log(err_ij + eps)."""
    err = _as_matrix(err)
    w = _weights(err, weights)
    return w @ np.log(err + eps)


def sgm(err, weights=None, eps: float = 0.01) -> float:
    """Shifted geometric mean exp(sum_i w_i/N_splits sum_j log(err_ij + eps)).

    Computed relative to the smallest shifted error, which is better
    conditioned and returns e + eps exactly for a constant matrix.
    """
    err = _as_matrix(err)
    ref = float(err.min()) + eps
    rel = _weights(err, weights) @ np.log((err + eps) / ref)
    return ref * float(np.exp(np.mean(rel)))


def arithmetic_mean(err, weights=None) -> float:
    err = _as_matrix(err)
    return float(_weights(err, weights) @ err.mean(axis=1))


def aggregate_alt(errors: np.ndarray, kind: str, weights=None) -> np.ndarray:
    """Score each method over a (methods, datasets, splits) array.

    ``arithmetic``: weighted mean error. ``mean_rank``: weighted mean of the
    per-cell average ranks (1 = best). ``normalized``: per-cell
    (err - min) / (max - min), all-equal cells scoring 0.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 3:
        raise ValueError("errors must be (methods, datasets, splits)")
    w = _weights(errors[0], weights)
    if kind == "arithmetic":
        cells = errors
    elif kind == "mean_rank":
        cells = np.empty_like(errors)
        for i in range(errors.shape[1]):
            for j in range(errors.shape[2]):
                cells[:, i, j] = midranks(errors[:, i, j])
    elif kind == "normalized":
        lo = errors.min(axis=0, keepdims=True)
        span = errors.max(axis=0, keepdims=True) - lo
        cells = np.divide(errors - lo, span, out=np.zeros_like(errors), where=span > 0)
    else:
        raise ValueError(f"unknown aggregation {kind!r}")
    return np.einsum("i,mi->m", w, cells.mean(axis=2))


def winrate_matrix(errors: np.ndarray, weights=None) -> np.ndarray:
    """Entry (a, b): weighted fraction of cells where a beats b, ties counting 1/2."""
    errors = np.asarray(errors, dtype=np.float64)
    w = _weights(errors[0], weights)
    a = errors[:, None]
    b = errors[None, :]
    score = (a < b) + 0.5 * (a == b)
    return np.einsum("i,abi->ab", w, score.mean(axis=3))


# -- Student-t machinery -------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    x = df / (df + t * t)
    tail = 0.5 * betainc(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0 else tail


@functools.lru_cache(maxsize=256)
def t_ppf(p: float, df: float) -> float:
    """Student-t quantile by bisection on the incomplete-beta CDF (|error| < 1e-10)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_ppf(1.0 - p, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
    while hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CIResult:
    point: float
    lower: float
    upper: float
    level: float = 0.95


def t_interval(z, level: float = 0.95) -> tuple[float, float, float]:
    """Mean of ``z`` with a Student-t confidence interval (len(z) - 1 dof)."""
    z = np.asarray(z, dtype=np.float64)
    m = len(z)
    if m < 2:
        raise ValueError("need at least two splits for a confidence interval")
    mean = float(z.mean())
    s = float(z.std(ddof=1))
    half = t_ppf(0.5 + level / 2.0, m - 1) * s / math.sqrt(m)
    return mean, mean - half, mean + half


def ci_sgm(err, weights=None, eps: float = 0.01, level: float = 0.95) -> CIResult:
    mean, a, b = t_interval(split_scores(err, weights, eps), level)
    return CIResult(math.exp(mean), math.exp(a), math.exp(b), level)


def ci_ratio(err_a, err_b, weights=None, eps: float = 0.01, level: float = 0.95) -> CIResult:
    """Confidence interval for the error increase 100 * (SGM_A / SGM_B - 1) in percent."""
    z = split_scores(err_a, weights, eps) - split_scores(err_b, weights, eps)
    mean, a, b = (100.0 * (math.exp(v) - 1.0) for v in t_interval(z, level))
    return CIResult(mean, a, b, level)


def ci_arithmetic(err, weights=None, level: float = 0.95) -> CIResult:
    err = _as_matrix(err)
    mean, a, b = t_interval(_weights(err, weights) @ err, level)
    return CIResult(mean, a, b, level)


# -- files -----------------------------------------------------------------------


def read_errors(path, groups_path=None) -> ErrorTable:
    """Read ``method,dataset,split,error`` rows (and optionally ``dataset,group``)."""
    cells = {}
    methods, datasets, splits = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"method", "dataset", "split", "error"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for row in reader:
            m, d, s = row["method"], row["dataset"], row["split"]
            for seen, v in ((methods, m), (datasets, d), (splits, s)):
                if v not in seen:
                    seen.append(v)
            if (m, d, s) in cells:
                raise ValueError(f"{path}: duplicate entry {(m, d, s)}")
            cells[m, d, s] = float(row["error"])
    if not cells:
        raise ValueError(f"{path}: no rows")
    errors = np.full((len(methods), len(datasets), len(splits)), np.nan)
    for (m, d, s), e in cells.items():
        errors[methods.index(m), datasets.index(d), splits.index(s)] = e
    if np.isnan(errors).any():
        raise ValueError(f"{path}: every method needs an error for every (dataset, split)")
    if groups_path is None:
        weights = group_weights(datasets)
    else:
        with open(groups_path, newline="", encoding="utf-8") as fh:
            group_of = {r["dataset"]: r["group"] for r in csv.DictReader(fh)}
        missing = [d for d in datasets if d not in group_of]
        if missing:
            raise ValueError(f"{groups_path}: no group for datasets {missing}")
        weights = group_weights([group_of[d] for d in datasets])
    return ErrorTable(methods, datasets, errors, weights)


def report(table: ErrorTable, agg: str = "sgm", eps: float = 0.01, ci: bool = False,
           level: float = 0.95) -> list[dict]:
    """One row per method with its benchmark score (and CI bounds if requested)."""
    rows = []
    if agg in ("rank", "norm", "mean_rank", "normalized"):
        kind = {"rank": "mean_rank", "norm": "normalized"}.get(agg, agg)
        scores = aggregate_alt(table.errors, kind, table.weights)
        return [{"method": m, "score": float(s)} for m, s in zip(table.methods, scores)]
    for k, m in enumerate(table.methods):
        err = table.errors[k]
        if agg == "sgm":
            row = {"method": m, "score": sgm(err, table.weights, eps)}
            if ci:
                r = ci_sgm(err, table.weights, eps, level)
                row.update(lower=r.lower, upper=r.upper)
        elif agg in ("arith", "arithmetic"):
            row = {"method": m, "score": arithmetic_mean(err, table.weights)}
            if ci:
                r = ci_arithmetic(err, table.weights, level)
                row.update(lower=r.lower, upper=r.upper)
        else:
            raise ValueError(f"unknown aggregation {agg!r}")
        rows.append(row)
    return rows


def error_increase_table(table: ErrorTable, reference: str, eps: float = 0.01,
                         level: float = 0.95) -> list[dict]:
    ref = table.of(reference)
    out = []
    for k, m in enumerate(table.methods):
        r = ci_ratio(table.errors[k], ref, table.weights, eps, level)
        out.append({"method": m, "increase_pct": r.point, "lower": r.lower, "upper": r.upper})
    return out


def winrate_rows(table: ErrorTable) -> list[dict]:
    mat = winrate_matrix(table.errors, table.weights)
    return [{"method": a, **{b: 100.0 * float(mat[i, j]) for j, b in enumerate(table.methods)}}
            for i, a in enumerate(table.methods)]


def format_float(x: float) -> str:
    return f"{x:.9g}"


def write_rows(rows: Sequence[Mapping], path=None, fh=None) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]

    def dump(stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([format_float(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys])

    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as out:
            dump(out)
    else:
        dump(fh)
