"""Random search over the RealMLP-HPO space."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from realmlp import bench, rng
from realmlp.config import RealMLPConfig, default_preset, preset
from realmlp.dataio import Dataset, SplitIndices
from realmlp.train import TrainedModel, predict, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Choice:
    values: tuple
    p: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not self.values:
            raise ValueError("Choice needs at least one value")
        if self.p is not None:
            if len(self.p) != len(self.values) or not math.isclose(sum(self.p), 1.0) or min(self.p) < 0:
                raise ValueError("Choice probabilities must match values and sum to 1")

    def sample(self, gen: np.random.Generator):
        return self.values[int(gen.choice(len(self.values), p=self.p))]

    def contains(self, v) -> bool:
        return v in self.values


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")

    def sample(self, gen):
        return float(gen.uniform(self.a, self.b))

    def contains(self, v) -> bool:
        return self.a <= v <= self.b


@dataclass(frozen=True)
class LogUniform(Uniform):
    def __post_init__(self):
        super().__post_init__()
        if self.a <= 0:
            raise ValueError("log-uniform needs a > 0")

    def sample(self, gen):
        return float(np.exp(gen.uniform(math.log(self.a), math.log(self.b))))


@dataclass(frozen=True)
class LogUniformInt(LogUniform):
    def sample(self, gen):
        v = int(round(np.exp(gen.uniform(math.log(self.a - 0.5), math.log(self.b + 0.5)))))
        return min(max(v, int(self.a)), int(self.b))


def realmlp_space(task: str) -> dict:
    space = {
        "num_embeddings": Choice(("none", "pbld", "pl", "plr")),
        "scaling_layer": Choice((True, False), (0.6, 0.4)),
        "lr": LogUniform(2e-2, 3e-1),
        "dropout": Choice((0.0, 0.15, 0.3), (0.3, 0.5, 0.2)),
        "activation": Choice(("relu", "selu", "mish")),
        "hidden_sizes": Choice(((256, 256, 256), (64, 64, 64, 64, 64), (512,)), (0.6, 0.2, 0.2)),
        "wd": Choice((0.0, 2e-2)),
        "periodic_init_std": LogUniform(0.05, 0.5),
    }
    if task == "classification":
        space["label_smoothing"] = Choice((0.0, 0.1), (0.3, 0.7))
    return space


def sample_config(space: Mapping[str, Any], gen: np.random.Generator) -> dict:
    """Draw one value per dimension, in the space's key order."""
    return {name: dim.sample(gen) for name, dim in space.items()}


def apply_sample(base: RealMLPConfig, sample: Mapping[str, Any]) -> RealMLPConfig:
    return base.replace(**sample)


@dataclass
class Trial:
    index: int
    seed: int
    params: dict
    val_metric: float = math.inf
    test_metric: float = math.nan
    wall_time: float = 0.0
    error: Optional[str] = None


def select_best(val_metrics: Sequence[float]) -> int:
    """Earliest index of the minimum validation metric."""
    vals = np.asarray(val_metrics, dtype=np.float64)
    vals = np.where(np.isnan(vals), np.inf, vals)
    return int(np.argmin(vals))


def holdout_metric(data: Dataset, tm: TrainedModel, rows) -> float:
    if len(rows) == 0:
        return math.nan
    pred = predict(tm, data, rows)
    if data.task == "classification":
        return bench.classification_error(data.y[rows], np.argmax(pred, axis=1))
    return bench.nrmse(data.y[rows], pred)


def _default_evaluate(data: Dataset, split: SplitIndices):
    def evaluate(cfg: RealMLPConfig, seed: int):
        tm, rec = train(data, split.train, split.val, cfg, seed=seed, preset="hpo")
        return rec.best_value, holdout_metric(data, tm, split.test), tm
    return evaluate


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]
    model: Optional[TrainedModel] = None
    dimensions: list[str] = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "seed", *self.dimensions, "val_metric", "test_metric", "wall_time", "error"])
            for t in self.trials:
                vals = [_fmt(t.params.get(d, "")) for d in self.dimensions]
                w.writerow([t.index, t.seed, *vals, _fmt(t.val_metric), _fmt(t.test_metric),
                            _fmt(t.wall_time), t.error or ""])


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return bench.format_float(v)
    if isinstance(v, tuple):
        return "[" + " ".join(str(x) for x in v) + "]"
    return str(v)


def random_search(data: Dataset, split: SplitIndices, steps: int = 50, seed: int = 0,
                  space: Optional[Mapping[str, Any]] = None, base: Optional[RealMLPConfig] = None,
                  jobs: int = 1, inject: Optional[Mapping[int, dict]] = None,
                  evaluate: Optional[Callable] = None) -> SearchResult:
    """Sample ``steps`` configurations, train each, and keep the best by validation metric.

    All configurations are drawn up front from one seeded stream, and trial
    ``i`` trains with ``derive_seed(seed, i)``, so results do not depend on
    ``jobs``. ``inject`` replaces the sampled values of chosen trials.
    ``evaluate(config, seed) -> (val, test, model)`` overrides training.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    space = realmlp_space(data.task) if space is None else space
    base = preset(default_preset(data.task)) if base is None else base
    evaluate = evaluate or _default_evaluate(data, split)
    gen = rng.stream(seed, "hpo")
    samples = [sample_config(space, gen) for _ in range(steps)]
    for i, override in (inject or {}).items():
        samples[i] = {**samples[i], **override}

    def run(i):
        trial = Trial(i, rng.derive_seed(seed, i), samples[i])
        start = time.perf_counter()
        model = None
        try:
            trial.val_metric, trial.test_metric, model = evaluate(apply_sample(base, samples[i]), trial.seed)
        except Exception as e:  # a failed trial is recorded, not fatal
            log.warning("trial %d failed: %s", i, e)
            trial.error = f"{type(e).__name__}: {e}"
            trial.val_metric = math.inf
        trial.wall_time = time.perf_counter() - start
        return trial, model

    trials, best_model, best_idx = [], None, None
    if jobs > 1:
        ex = ThreadPoolExecutor(jobs)
        results = ex.map(run, range(steps))
    else:
        ex = None
        results = map(run, range(steps))
    try:
        for trial, model in results:
            trials.append(trial)
            current = select_best([t.val_metric for t in trials])
            if current != best_idx:
                best_idx, best_model = current, model
    finally:
        if ex is not None:
            ex.shutdown()
    if all(t.error is not None for t in trials):
        raise RuntimeError("all trials failed:\n" + "\n".join(f"  trial {t.index}: {t.error}" for t in trials))
    return SearchResult(trials[best_idx], trials, best_model, list(space))
