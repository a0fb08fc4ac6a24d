"""Datasets: CSV IO, noise and distractor injection, splits, synthetic problems."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationExhausted, MissingTarget, NameCollision, NonNumericCell
from .exprcore import (
    Binary,
    Constant,
    Expr,
    OperatorSet,
    Unary,
    Variable,
    complexity,
    evaluate,
    iter_nodes,
)

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "load_csv",
    "write_csv",
    "add_target_noise",
    "add_distractors",
    "generate_synthetic",
    "sample_dataset",
    "split",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    variable_names: tuple
    X: np.ndarray
    y: np.ndarray
    target_name: str = "y"
    columns: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        names = tuple(self.variable_names)
        if X.shape[1] != len(names):
            raise ValueError(f"{len(names)} names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different row counts")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        cols = np.ascontiguousarray(X.T)
        cols.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "columns", cols)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def __len__(self):
        return self.n_rows

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.variable_names == other.variable_names
            and self.target_name == other.target_name
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.variable_names.index(name)]

    def take(self, rows) -> "Dataset":
        return Dataset(self.variable_names, self.X[rows], self.y[rows], self.target_name)

    def operator_set(self, **kwargs) -> OperatorSet:
        return OperatorSet(variable_names=self.variable_names, **kwargs)


def load_csv(path, target_name: str) -> Dataset:
    """Read a header-first numeric CSV; every non-target column is a feature."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise OSError(f"{path}: empty file") from None
        if target_name not in header:
            raise MissingTarget(target_name)
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise NonNumericCell(r, header[min(len(row), len(header) - 1)], "<wrong field count>")
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise NonNumericCell(r, header[c], cell) from None
            rows.append(vals)
    if not rows:
        raise OSError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    t = header.index(target_name)
    feat = [i for i in range(len(header)) if i != t]
    return Dataset(tuple(header[i] for i in feat), arr[:, feat], arr[:, t], target_name)


def write_csv(d: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*d.variable_names, d.target_name])
        for row, target in zip(d.X, d.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def add_target_noise(d: Dataset, level: float, rng) -> Dataset:
    """Gaussian target noise with standard deviation ``level * RMS(y)``."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    rms = math.sqrt(float(np.mean(d.y**2)))
    if level == 0 or rms == 0:
        return d
    noise = rng.normal(0.0, level * rms, size=d.n_rows)
    return Dataset(d.variable_names, d.X, d.y + noise, d.target_name)


def add_distractors(d: Dataset, k: int, name_pool, rng) -> Dataset:
    """Append ``k`` standard-normal columns named from ``name_pool``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return d
    pool = list(name_pool)
    clash = set(pool) & set(d.variable_names)
    if clash:
        raise NameCollision(f"distractor names already in dataset: {sorted(clash)}")
    if len(pool) < k:
        raise NameCollision(f"name pool has {len(pool)} names, need {k}")
    names = [pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False))]
    extra = rng.standard_normal((d.n_rows, k))
    return Dataset(d.variable_names + tuple(names), np.hstack([d.X, extra]), d.y, d.target_name)


def split(d: Dataset, train_fraction: float, rng):
    """Random disjoint partition into ``floor(f*N)`` train and the rest."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(math.floor(train_fraction * d.n_rows))
    perm = rng.permutation(d.n_rows)
    return d.take(np.sort(perm[:n_train])), d.take(np.sort(perm[n_train:]))


def sample_dataset(truth: Expr, variable_names, n_samples: int, rng, ranges=None,
                   target_name: str = "y", max_rounds: int = 50) -> Dataset:
    """Sample features uniformly on ``ranges`` and evaluate ``truth``.

    Rows with a non-finite target are redrawn.
    """
    names = tuple(variable_names)
    ranges = ranges or {}
    bounds = np.array([ranges.get(n, (0.1, 5.0)) for n in names], dtype=float)
    kept_X, kept_y, have = [], [], 0
    for _ in range(max_rounds):
        need = n_samples - have
        if need <= 0:
            break
        X = rng.uniform(bounds[:, 0], bounds[:, 1], size=(max(need, 16), len(names)))
        y = evaluate(truth, X)
        ok = np.isfinite(y)
        X, y = X[ok][:need], y[ok][:need]
        kept_X.append(X)
        kept_y.append(y)
        have += len(y)
    if have < n_samples:
        raise GenerationExhausted("target is non-finite on most of the sampling domain")
    return Dataset(names, np.vstack(kept_X), np.concatenate(kept_y), target_name)


@dataclass
class SyntheticSpec:
    n_vars: int = 3
    max_complexity: int = 20
    n_samples: int = 1000
    binary_weights: dict = field(default_factory=lambda: {"add": 1.0, "sub": 0.5, "mul": 1.0, "div": 1.0})
    unary_weights: dict = field(default_factory=lambda: {"exp": 1.0, "log": 1.0, "cos": 1.0, "sin": 0.5, "sqrt": 0.5})
    var_range: tuple = (0.1, 5.0)
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError("n_vars must be >= 1")
        if not 5 < self.max_complexity <= 20:
            raise ValueError("max_complexity must lie in (5, 20]")

    @property
    def variable_names(self):
        return tuple(f"x{i + 1}" for i in range(self.n_vars))

    def operator_set(self) -> OperatorSet:
        return OperatorSet(
            binary_ops=tuple(k for k, v in self.binary_weights.items() if v > 0),
            unary_ops=tuple(k for k, v in self.unary_weights.items() if v > 0),
            variable_names=self.variable_names,
        )


def _weighted(rng, weights: dict) -> str:
    keys = [k for k, v in weights.items() if v > 0]
    p = np.array([weights[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _random_synthetic_tree(spec: SyntheticSpec, rng, budget: int) -> Expr:
    """Random tree of at most ``budget`` nodes, biased towards nested unaries."""
    names = spec.variable_names

    def leaf():
        if rng.random() < 0.3:
            return Constant(round(float(rng.uniform(-1.0, 1.0)), 3) or 0.5)
        i = int(rng.integers(len(names)))
        return Variable(i, names[i])

    def build(b):
        if b < 2 or (b < 4 and rng.random() < 0.5):
            return leaf()
        if b >= 2 and rng.random() < 0.35:
            return Unary(_weighted(rng, spec.unary_weights), build(b - 1))
        if b < 3:
            return leaf()
        left_budget = int(rng.integers(1, b - 1))
        return Binary(_weighted(rng, spec.binary_weights), build(left_budget), build(b - 1 - left_budget))

    return build(budget)


def generate_synthetic(spec: SyntheticSpec, rng):
    """Draw an unusual ground-truth expression and a dataset sampled from it.

    Returns ``(ground_truth, dataset)``. Candidates that are constant on the
    sample, or non-finite on most of the domain, are rejected.
    """
    ops = spec.operator_set()
    names = spec.variable_names
    ranges = {n: spec.var_range for n in names}
    for _ in range(spec.max_retries):
        budget = int(rng.integers(5, spec.max_complexity))
        truth = _random_synthetic_tree(spec, rng, budget)
        if complexity(truth) >= spec.max_complexity or complexity(truth) < 4:
            continue
        if not any(isinstance(n, Variable) for n in iter_nodes(truth)):
            continue
        probe = rng.uniform(spec.var_range[0], spec.var_range[1], size=(400, len(names)))
        yp = evaluate(truth, probe)
        finite = np.isfinite(yp)
        if finite.mean() < 0.99 or np.nanmax(np.abs(yp[finite])) > 1e12:
            continue
        if np.var(yp[finite]) < 1e-12:
            continue
        try:
            d = sample_dataset(truth, names, spec.n_samples, rng, ranges)
        except GenerationExhausted:
            continue
        if np.var(d.y) < 1e-12:
            continue
        return truth, d
    raise GenerationExhausted(f"no usable expression after {spec.max_retries} attempts")
