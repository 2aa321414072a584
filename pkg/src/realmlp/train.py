"""Training loop with scheduled hyperparameters and last-best-epoch selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from realmlp import autodiff as ad
from realmlp import bench, rng, schedules
from realmlp.config import RealMLPConfig, validate
from realmlp.dataio import Dataset, TargetStandardizer, fit_target_standardizer
from realmlp.model import RealMLP, build_model, initialize
from realmlp.optim import AdamState, NonFiniteGradient, adamw_step
from realmlp.preprocess import FittedPreprocessor, fit_preprocessor

log = logging.getLogger(__name__)


@dataclass
class TrainRecord:
    stop_metric: str
    val_metric: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    aborted: bool = False

    @property
    def best_value(self) -> float:
        return self.val_metric[self.best_epoch] if self.best_epoch >= 0 else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_metric"])
            for e, (tl, vm) in enumerate(zip(self.train_loss, self.val_metric)):
                w.writerow([e, bench.format_float(tl), bench.format_float(vm)])


@dataclass
class TrainedModel:
    """A network together with everything needed to predict from raw columns."""

    model: RealMLP
    preprocessor: FittedPreprocessor
    task: str
    classes: list[str]
    categories: list[list[str]]
    standardizer: Optional[TargetStandardizer] = None
    clip_range: Optional[tuple[float, float]] = None
    seed: int = 0
    preset: str = ""
    schema_digest: str = ""
    schema_columns: tuple = ()

    @property
    def config(self) -> RealMLPConfig:
        return self.model.config


def select_best_epoch(curve, tie_break: str = "last") -> int:
    """Index of the minimum; ``last`` returns the latest of tied minima."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty curve")
    best = 0
    for e in range(1, len(curve)):
        if curve[e] < curve[best] or (tie_break == "last" and curve[e] == curve[best]):
            best = e
    return best


def resolve_stop_metric(cfg: RealMLPConfig, task: str) -> str:
    if cfg.stop_metric == "auto":
        return "err" if task == "classification" else "rmse"
    if task == "regression" and cfg.stop_metric != "rmse":
        raise ValueError(f"stop metric {cfg.stop_metric!r} needs a classification task")
    if task == "classification" and cfg.stop_metric == "rmse":
        raise ValueError("stop metric 'rmse' needs a regression task")
    return cfg.stop_metric


def outputs_to_predictions(tm: TrainedModel, out: np.ndarray) -> np.ndarray:
    out = np.asarray(out, dtype=np.float64)
    if tm.task == "classification":
        return ad.softmax(out)
    y = out[:, 0]
    if tm.standardizer is not None:
        y = tm.standardizer.invert(y)
    if tm.clip_range is not None:
        y = np.clip(y, *tm.clip_range)
    return y


def predict_arrays(tm: TrainedModel, x_num, x_cat) -> np.ndarray:
    x, codes = tm.preprocessor.transform(x_num, x_cat)
    return outputs_to_predictions(tm, tm.model.output(x.astype(tm.model.dtype), codes))


def predict(tm: TrainedModel, data: Dataset, rows=None) -> np.ndarray:
    """Class probabilities (n, K) or regression values (n,)."""
    if rows is not None:
        data = data.subset(rows)
    return predict_arrays(tm, data.x_num, data.x_cat)


def predict_labels(tm: TrainedModel, data: Dataset, rows=None) -> np.ndarray:
    return np.argmax(predict(tm, data, rows), axis=1)


def validation_metric(kind: str, y_true, pred) -> float:
    if kind == "err":
        return bench.classification_error(y_true, np.argmax(pred, axis=1))
    if kind == "ce":
        return bench.cross_entropy(y_true, pred)
    return bench.rmse(y_true, pred)


def train(data: Dataset, train_idx, val_idx, config: RealMLPConfig, seed: int = 0,
          preset: str = "", stop_at_epoch: Optional[int] = None, standardize_idx=None,
          epoch_callback=None) -> tuple[TrainedModel, TrainRecord]:
    """Fit preprocessing, initialize and train a RealMLP.

    After training, parameters are reverted to the best epoch by the
    validation stopping metric (last of tied minima unless ``tie_break`` is
    ``first``). With an empty ``val_idx`` the final epoch is kept.
    ``stop_at_epoch`` (0-based) ends training after that epoch while keeping
    the schedule of the full run, and keeps that epoch's parameters.
    ``standardize_idx`` defaults to train + validation rows.
    """
    validate(config)
    cfg = config
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise ValueError("empty training set")
    task = data.task
    stop_metric = resolve_stop_metric(cfg, task)
    dt = np.dtype(cfg.dtype)

    pre = fit_preprocessor(data, train_idx, cfg.max_one_hot)
    x_tr, c_tr = pre.apply(data, train_idx)
    x_va, c_va = pre.apply(data, val_idx)
    x_tr, x_va = x_tr.astype(dt), x_va.astype(dt)

    standardizer = clip_range = None
    if task == "regression":
        y_all = data.y.astype(np.float64)
        if cfg.standardize_targets:
            std_idx = np.concatenate([train_idx, val_idx]) if standardize_idx is None else standardize_idx
            standardizer = fit_target_standardizer(y_all, std_idx)
        if cfg.clip_output:
            clip_range = (float(y_all[train_idx].min()), float(y_all[train_idx].max()))
        y_fit = standardizer.apply(y_all[train_idx]) if standardizer else y_all[train_idx]
        y_tr = y_fit.astype(dt)
    else:
        y_tr = data.y[train_idx]
    y_va = data.y[val_idx] if len(val_idx) else None

    model = build_model(cfg, pre, task, data.n_classes)
    initialize(model, x_tr, c_tr, seed)
    tm = TrainedModel(model, pre, task, list(data.classes), [list(c) for c in data.categories],
                      standardizer, clip_range, seed, preset, data.schema.digest(), data.schema.columns)

    n = len(train_idx)
    bs = cfg.batch_size
    per_epoch = math.ceil(n / bs)
    total = cfg.epochs * per_epoch
    last_epoch = cfg.epochs - 1 if stop_at_epoch is None else min(stop_at_epoch, cfg.epochs - 1)
    lr_sched = schedules.get(cfg.lr_schedule)
    drop_sched = schedules.get(cfg.dropout_schedule)
    wd_sched = schedules.get(cfg.wd_schedule)
    lr_fac = {k: model.factor(k, "lr") for k in model.params}
    wd_fac = {k: model.factor(k, "wd") for k in model.params}
    shuffle_rng = rng.stream(seed, "shuffle")
    drop_rng = rng.stream(seed, "dropout")
    state = AdamState()
    record = TrainRecord(stop_metric)
    best_params = model.copy_params()
    select_on_val = len(val_idx) > 0 and stop_at_epoch is None

    it = 0
    for epoch in range(last_epoch + 1):
        perm = shuffle_rng.permutation(n)
        losses = []
        try:
            for b in range(per_epoch):
                rows = perm[b * bs:(b + 1) * bs]
                t = it / total
                lr_t = cfg.lr * float(lr_sched(t))
                wd_t = cfg.wd * float(wd_sched(t))
                p_t = cfg.dropout * float(drop_sched(t))
                tape = ad.Tape()
                pv = {k: tape.var(v, requires_grad=True) for k, v in model.params.items()}
                out = model.forward(tape, x_tr[rows], c_tr[rows], pv, dropout_p=p_t, dropout_rng=drop_rng)
                if task == "classification":
                    loss = ad.softmax_cross_entropy(out, y_tr[rows], cfg.label_smoothing)
                else:
                    loss = ad.mse(out, y_tr[rows])
                if not np.isfinite(loss.value):
                    raise NonFiniteGradient(f"non-finite loss at epoch {epoch}")
                tape.backward(loss)
                grads = {k: v.grad for k, v in pv.items() if v.grad is not None}
                adamw_step(model.params, grads, state,
                           {k: lr_t * lr_fac[k] for k in grads}, {k: wd_t * wd_fac[k] for k in grads},
                           cfg.beta1, cfg.beta2, cfg.adam_eps)
                losses.append(float(loss.value))
                it += 1
        except NonFiniteGradient as e:
            log.warning("aborting training: %s", e)
            record.aborted = True
            break
        record.train_loss.append(float(np.mean(losses)))
        if y_va is not None:
            pred = outputs_to_predictions(tm, model.output(x_va, c_va))
            record.val_metric.append(validation_metric(stop_metric, y_va, pred))
        else:
            record.val_metric.append(math.nan)
        if epoch_callback is not None:
            epoch_callback(epoch, model)
        if select_on_val:
            best = select_best_epoch(record.val_metric, cfg.tie_break)
            if best == epoch:
                best_params = model.copy_params()
                record.best_epoch = epoch
        else:
            best_params = model.copy_params()
            record.best_epoch = epoch

    model.params = best_params
    return tm, record
