"""Bagging / refitting ensembles with individual or joint epoch selection,
and greedy (with-replacement) ensemble selection."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from realmlp import bench, rng
from realmlp.config import RealMLPConfig
from realmlp.dataio import Dataset
from realmlp.train import TrainedModel, TrainRecord, predict, select_best_epoch, train


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[np.ndarray, ...]
    unassigned: np.ndarray
    stratified: bool

    def train_rows(self, pool, i: int) -> np.ndarray:
        """Pool rows outside fold ``i`` (unassigned rows included)."""
        return np.setdiff1d(np.asarray(pool), self.folds[i])


def make_folds(pool, k: int = 5, seed: int = 0, labels=None) -> FoldPlan:
    """Split ``pool`` into ``k`` disjoint folds of exactly ``len(pool) // k`` rows.

    With ``labels`` (aligned with ``pool``) the folds are stratified: rows are
    ordered by class, surplus rows are dropped at evenly spaced positions and
    the rest are dealt round-robin.
    """
    pool = np.asarray(pool, dtype=np.int64)
    n = len(pool)
    m = n // k
    if m < 1:
        raise ValueError(f"cannot make {k} non-empty folds from {n} rows")
    gen = rng.stream(seed, "folds")
    order = gen.permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        order = order[np.argsort(labels[order], kind="stable")]
    surplus = n - m * k
    drop = np.floor((np.arange(surplus) + 0.5) * n / surplus).astype(np.int64) if surplus else np.zeros(0, np.int64)
    keep = np.setdiff1d(np.arange(n), drop)
    dealt = order[keep]
    folds = tuple(np.sort(pool[dealt[f::k]]) for f in range(k))
    return FoldPlan(folds, np.sort(pool[order[drop]]), labels is not None)


def select_epoch_individual(curve, tie_break: str = "last") -> int:
    return select_best_epoch(curve, tie_break)


def select_epoch_joint(curves: Sequence, tie_break: str = "last") -> int:
    """One shared epoch minimizing the sum of the fold curves.

    Curves of unequal length (aborted runs) are cut to the shortest one.
    """
    if np.ndim(curves[0]) == 0:
        curves = [curves]
    horizon = min(len(c) for c in curves)
    curves = np.asarray([np.asarray(c, dtype=np.float64)[:horizon] for c in curves])
    return select_best_epoch(curves.sum(axis=0), tie_break)


def average_predictions(preds: Sequence[np.ndarray], weights=None) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    if weights is None:
        return preds.mean(axis=0)
    w = np.asarray(weights, dtype=np.float64)
    return np.tensordot(w / w.sum(), preds, axes=1)


def _default_metric(task: str) -> Callable:
    if task == "classification":
        return lambda y, p: bench.classification_error(y, np.argmax(p, axis=1))
    return bench.rmse


def greedy_selection(val_preds: Sequence[np.ndarray], y_val, task: str = "classification",
                     steps: int = 40, metric: Optional[Callable] = None) -> np.ndarray:
    """Greedy with-replacement ensemble selection.

    Each step adds the candidate whose inclusion gives the lowest validation
    error of the averaged prediction (ties: lowest index). Returns normalized
    counts of the best prefix (first minimum), so the result is never worse
    on validation than the best single candidate.
    """
    preds = np.asarray(val_preds, dtype=np.float64)
    if len(preds) == 0:
        raise ValueError("need at least one candidate")
    metric = metric or _default_metric(task)
    counts = np.zeros(len(preds))
    running = np.zeros_like(preds[0])
    best_err, best_counts = np.inf, None
    for s in range(steps):
        errs = [metric(y_val, (running + p) / (s + 1)) for p in preds]
        c = int(np.argmin(errs))
        counts[c] += 1
        running += preds[c]
        if errs[c] < best_err:
            best_err, best_counts = errs[c], counts.copy()
    return best_counts / best_counts.sum()


@dataclass
class Ensemble:
    members: list[TrainedModel]
    epochs: list[int]
    mode: str
    stopping: str
    weights: Optional[np.ndarray] = None
    fold_curves: list[list[float]] = field(default_factory=list)
    member_train_rows: list[np.ndarray] = field(default_factory=list)

    def predict(self, data: Dataset, rows=None) -> np.ndarray:
        return average_predictions([predict(m, data, rows) for m in self.members], self.weights)


def predict_ensemble(ens: Ensemble, data: Dataset, rows=None) -> np.ndarray:
    return ens.predict(data, rows)


def fit_ensemble(data: Dataset, pool, config: RealMLPConfig, mode: str = "bagging",
                 n_members: int = 5, stopping: str = "individual", seed: int = 0,
                 preset: str = "", jobs: int = 1, k: int = 5) -> Ensemble:
    """Train an ensemble of ``n_members`` models on the train+validation ``pool``.

    Bagged model i trains on pool minus fold i and is validated on fold i.
    ``bagging`` uses bagged models as members; ``refitting`` trains members on
    the whole pool for the epoch chosen from the bagged validation curves.
    Joint stopping needs the curves of all ``k`` folds.
    """
    if mode not in ("bagging", "refitting"):
        raise ValueError(f"unknown mode {mode!r}")
    if stopping not in ("individual", "joint"):
        raise ValueError(f"unknown stopping {stopping!r}")
    if not 1 <= n_members <= k:
        raise ValueError(f"members must be between 1 and {k}")
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    labels = data.y[pool] if data.task == "classification" else None
    plan = make_folds(pool, k, seed, labels)
    n_bagged = k if stopping == "joint" else n_members

    def run(job):
        return train(data, *job[0], config, seed=job[1], preset=preset, standardize_idx=pool,
                     stop_at_epoch=job[2])

    def run_all(jobs_list):
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as ex:
                return list(ex.map(run, jobs_list))
        return [run(j) for j in jobs_list]

    bag_jobs = [((plan.train_rows(pool, i), plan.folds[i]), rng.derive_seed(seed, i), None)
                for i in range(n_bagged)]
    bagged: list[tuple[TrainedModel, TrainRecord]] = run_all(bag_jobs)
    curves = [rec.val_metric for _, rec in bagged]
    tb = config.tie_break
    if stopping == "joint":
        t_joint = select_epoch_joint(curves, tb)
        epochs = [t_joint] * n_members
    else:
        epochs = [select_epoch_individual(curves[i], tb) for i in range(n_members)]

    if mode == "bagging":
        members, rows = [], []
        redo = []
        for i in range(n_members):
            if bagged[i][1].best_epoch == epochs[i]:
                members.append(bagged[i][0])
            else:
                members.append(None)
                redo.append(i)
            rows.append(bag_jobs[i][0][0])
        # joint stopping may pick an epoch other than the member's own best:
        # retrain deterministically (same seed) up to that epoch
        for i, (tm, _) in zip(redo, run_all([(bag_jobs[i][0], bag_jobs[i][1], epochs[i]) for i in redo])):
            members[i] = tm
    else:
        refit_jobs = [((pool, np.zeros(0, np.int64)), rng.derive_seed(seed, k + i), epochs[i])
                      for i in range(n_members)]
        members = [tm for tm, _ in run_all(refit_jobs)]
        rows = [pool] * n_members
    return Ensemble(members, epochs, mode, stopping, None, curves, rows)
