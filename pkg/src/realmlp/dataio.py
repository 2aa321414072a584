"""CSV loading, missing-value policy, train/val/test splits and target scaling."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from realmlp import rng

KINDS = ("numerical", "categorical", "target")
_KIND_ALIASES = {"num": "numerical", "cat": "categorical", "target": "target",
                 "numerical": "numerical", "categorical": "categorical"}

MISSING = ""


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[tuple[str, str], ...]
    task: str

    def __post_init__(self):
        try:
            cols = tuple((str(n), _KIND_ALIASES.get(k, k)) for n, k in self.columns)
        except (TypeError, ValueError):
            raise SchemaError("columns must be (name, kind) pairs") from None
        object.__setattr__(self, "columns", cols)
        if self.task not in ("classification", "regression"):
            raise SchemaError(f"unknown task {self.task!r}")
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        kinds = [k for _, k in self.columns]
        for k in kinds:
            if k not in KINDS:
                raise SchemaError(f"unknown column kind {k!r}")
        if kinds.count("target") != 1:
            raise SchemaError("schema needs exactly one target column")
        if len(kinds) < 2:
            raise SchemaError("schema needs at least one feature column")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def numerical(self) -> list[str]:
        return [n for n, k in self.columns if k == "numerical"]

    @property
    def categorical(self) -> list[str]:
        return [n for n, k in self.columns if k == "categorical"]

    @property
    def target(self) -> str:
        return next(n for n, k in self.columns if k == "target")

    def digest(self) -> str:
        text = self.task + ";" + ";".join(f"{n}:{k}" for n, k in self.columns)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def read(cls, path) -> "DatasetSchema":
        """Parse a schema file: ``task,<kind>`` header then ``name,num|cat|target`` lines."""
        task = None
        columns = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != 2:
                    raise SchemaError(f"{path}:{lineno}: expected 'name,kind'")
                if parts[0] == "task" and task is None:
                    task = parts[1]
                    continue
                if parts[1] not in _KIND_ALIASES:
                    raise SchemaError(f"{path}:{lineno}: unknown kind {parts[1]!r}")
                columns.append((parts[0], _KIND_ALIASES[parts[1]]))
        if task is None:
            raise SchemaError(f"{path}: missing 'task,...' line")
        return cls(tuple(columns), task)

    def write(self, path) -> None:
        short = {"numerical": "num", "categorical": "cat", "target": "target"}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"task,{self.task}\n")
            for n, k in self.columns:
                fh.write(f"{n},{short[k]}\n")


@dataclass
class Dataset:
    """Column-typed table. Categorical cells are integer codes into ``categories``.

    ``categories[j]`` lists the distinct raw strings of categorical column j in
    first-appearance order; the empty string stands for a missing cell.
    """

    schema: DatasetSchema
    x_num: np.ndarray
    x_cat: np.ndarray
    categories: list[list[str]]
    y: Optional[np.ndarray]
    classes: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.x_num.shape[0]

    @property
    def task(self) -> str:
        return self.schema.task

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def cardinalities(self) -> list[int]:
        return [len(c) for c in self.categories]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.schema, self.x_num[idx], self.x_cat[idx], self.categories,
                       None if self.y is None else self.y[idx], self.classes)


def _vocab_code(vocab: list[str], lookup: dict[str, int], value: str) -> int:
    code = lookup.get(value)
    if code is None:
        code = len(vocab)
        vocab.append(value)
        lookup[value] = code
    return code


def load_csv(path, schema: DatasetSchema, categories: Optional[Sequence[Sequence[str]]] = None,
             classes: Optional[Sequence[str]] = None, require_target: bool = True) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Rows with a missing numerical value (or a missing target) are dropped.
    Passing ``categories``/``classes`` from a previous load keeps codes stable
    across files; values not seen before are appended.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    needed = [n for n in schema.names if require_target or n != schema.target]
    missing_cols = [n for n in needed if n not in header]
    if missing_cols:
        raise SchemaError(f"{path}: header lacks columns {missing_cols}")
    extra = [h for h in header if h not in schema.names]
    if extra:
        raise SchemaError(f"{path}: header has unknown columns {extra}")
    pos = {h: i for i, h in enumerate(header)}
    has_target = schema.target in pos

    cat_vocab = [list(c) for c in categories] if categories is not None else [[] for _ in schema.categorical]
    cat_lookup = [{v: i for i, v in enumerate(c)} for c in cat_vocab]
    class_vocab = list(classes) if classes is not None else []
    class_lookup = {v: i for i, v in enumerate(class_vocab)}

    num_rows, cat_rows, targets = [], [], []
    for lineno, row in enumerate(rows, 2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        nums = []
        skip = False
        for name in schema.numerical:
            cell = row[pos[name]].strip()
            if cell == MISSING:
                skip = True
                break
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse {cell!r} in column {name!r}") from None
            if math.isnan(v):
                skip = True
                break
            nums.append(v)
        if skip:
            continue
        if has_target:
            cell = row[pos[schema.target]].strip()
            if cell == MISSING:
                continue
            if schema.task == "regression":
                try:
                    t = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: cannot parse target {cell!r}") from None
                if not math.isfinite(t):
                    continue
            else:
                t = _vocab_code(class_vocab, class_lookup, cell)
            targets.append(t)
        cats = [_vocab_code(cat_vocab[j], cat_lookup[j], row[pos[name]].strip())
                for j, name in enumerate(schema.categorical)]
        num_rows.append(nums)
        cat_rows.append(cats)

    if not num_rows:
        raise DataError(f"{path}: no rows left after dropping missing values")
    n = len(num_rows)
    x_num = np.array(num_rows, dtype=np.float64).reshape(n, len(schema.numerical))
    x_cat = np.array(cat_rows, dtype=np.int64).reshape(n, len(schema.categorical))
    y = None
    if has_target:
        y = np.array(targets, dtype=np.float64 if schema.task == "regression" else np.int64)
        if schema.task == "classification" and classes is None and len(class_vocab) < 2:
            raise DataError(f"{path}: classification needs at least 2 classes")
    return Dataset(schema, x_num, x_cat, cat_vocab, y, class_vocab)


def from_arrays(x_num, y, task: str, x_cat=None, n_categories: Optional[Sequence[int]] = None) -> Dataset:
    """Build a Dataset from in-memory arrays (synthetic experiments, tests)."""
    x_num = np.asarray(x_num, dtype=np.float64)
    if x_num.ndim == 1:
        x_num = x_num[:, None]
    n = x_num.shape[0]
    x_cat = np.zeros((n, 0), dtype=np.int64) if x_cat is None else np.asarray(x_cat, dtype=np.int64).reshape(n, -1)
    if n_categories is None:
        n_categories = [int(x_cat[:, j].max()) + 1 if n else 0 for j in range(x_cat.shape[1])]
    columns = [(f"x{i}", "numerical") for i in range(x_num.shape[1])]
    columns += [(f"c{j}", "categorical") for j in range(x_cat.shape[1])]
    columns.append(("y", "target"))
    categories = [[str(v) for v in range(k)] for k in n_categories]
    y = np.asarray(y)
    classes = []
    if task == "classification":
        y = y.astype(np.int64)
        classes = [str(c) for c in range(int(y.max()) + 1)]
    else:
        y = y.astype(np.float64)
    return Dataset(DatasetSchema(tuple(columns), task), x_num, x_cat, categories, y, classes)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    @property
    def train_val(self) -> np.ndarray:
        return np.concatenate([self.train, self.val])


def split_sizes(n_rows: int) -> tuple[int, int, int]:
    n_val = n_test = int(math.floor(0.2 * n_rows))
    return n_rows - n_val - n_test, n_val, n_test


def make_split(n_rows: int, seed: int, task: str = "classification", labels=None) -> SplitIndices:
    """Uniform random 60/20/20 split; flooring remainders go to the training part.

    ``task`` and ``labels`` are accepted for interface symmetry; the split is
    not stratified.
    """
    n_train, n_val, n_test = split_sizes(n_rows)
    if n_val < 1:
        raise DataError(f"need at least 5 rows to split, got {n_rows}")
    perm = rng.stream(seed, "split").permutation(n_rows)
    return SplitIndices(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                        np.sort(perm[n_train + n_val:]), seed)


@dataclass(frozen=True)
class TargetStandardizer:
    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        return not self.std > 0

    def apply(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.degenerate:
            return np.zeros_like(y)
        return (y - self.mean) / self.std

    def invert(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.degenerate:
            return np.full_like(z, self.mean)
        return z * self.std + self.mean


def fit_target_standardizer(y, idx=None) -> TargetStandardizer:
    """Mean and population std of ``y[idx]`` (pass train+val indices only)."""
    y = np.asarray(y, dtype=np.float64)
    if idx is not None:
        y = y[np.asarray(idx)]
    if y.size == 0:
        raise DataError("cannot standardize an empty target vector")
    mean = float(np.mean(y))
    std = float(np.sqrt(np.mean((y - mean) ** 2)))
    # rounding noise from the mean of a constant vector
    if std <= 4 * np.finfo(np.float64).eps * abs(mean):
        std = 0.0
    return TargetStandardizer(mean, std)
