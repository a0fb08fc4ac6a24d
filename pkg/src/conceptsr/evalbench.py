"""Benchmark harness and skeleton-equation (scaling law) fitting."""

from __future__ import annotations

import copy
import csv
import enum
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .config import RunConfig
from .data import Dataset, add_distractors, add_target_noise, load_csv, sample_dataset
from .errors import ConfigError, FitDiverged
from .exprcore import (
    BINARY_NAMES,
    UNARY_NAMES,
    Expr,
    OperatorSet,
    evaluate,
    parse,
    simplify,
    variables_used,
)

log = logging.getLogger(__name__)

FULL_GRAMMAR = dict(binary_ops=BINARY_NAMES, unary_ops=UNARY_NAMES)


# ---------------------------------------------------------------------------
# metrics


def exact_match(pred: Expr, truth: Expr, d: Dataset, rel_tol: float = 1e-3, n_points: int = 1000,
                rng=None, eps: float = 1e-12) -> bool:
    """Numerical stand-in for "simplifies to the ground truth".

    ``pred`` must not use variables absent from ``truth``, and both must agree
    within ``rel_tol`` on every in-domain sample point.
    """
    if not variables_used(pred) <= variables_used(truth):
        return False
    pred, truth = simplify(pred), simplify(truth)
    rng = rng if rng is not None else np.random.default_rng(0)
    X = d.X
    if X.shape[0] < n_points:
        lo, hi = X.min(axis=0), X.max(axis=0)
        extra = rng.uniform(lo, hi, size=(n_points - X.shape[0], X.shape[1]))
        X = np.vstack([X, extra])
    pts = Dataset(d.variable_names, X, np.zeros(X.shape[0]), d.target_name)
    t = evaluate(truth, pts)
    p = evaluate(pred, pts)
    dom = np.isfinite(t)
    if dom.sum() < max(1, 0.5 * len(t)):
        return False
    if not np.isfinite(p[dom]).all():
        return False
    err = np.abs(p[dom] - t[dom])
    return bool(np.all(err <= rel_tol * (np.abs(t[dom]) + eps)))


def r_squared(pred, d: Dataset) -> float:
    """Coefficient of determination of ``pred`` (an Expr or prediction array)."""
    yhat = evaluate(pred, d) if not isinstance(pred, np.ndarray) else pred
    if not np.isfinite(yhat).all():
        return -math.inf
    sse = float(np.sum((d.y - yhat) ** 2))
    sst = float(np.sum((d.y - d.y.mean()) ** 2))
    if sst == 0:
        return 1.0 if sse == 0 else -math.inf
    return 1.0 - sse / sst


# ---------------------------------------------------------------------------
# benchmark suites


class SolveCategory(str, enum.Enum):
    EXACT = "Exact Solve"
    ALMOST = "Almost Solve"
    CLOSE = "Close"
    NOT_CLOSE = "Not Close"


@dataclass
class Problem:
    name: str
    ground_truth: str | None = None
    csv: str | None = None
    target: str = "y"
    variables: list = field(default_factory=list)
    ranges: dict = field(default_factory=dict)
    n_samples: int = 1000
    noise: float = 0.0
    distractors: int = 0
    hints: list = field(default_factory=list)
    seed: int = 0

    def operator_set(self, names) -> OperatorSet:
        return OperatorSet(variable_names=tuple(names), **FULL_GRAMMAR)

    def truth_expr(self, names=None) -> Expr | None:
        if not self.ground_truth:
            return None
        return parse(self.ground_truth, self.operator_set(names or self.variables))

    def dataset(self, base_dir=None) -> Dataset:
        rng = np.random.default_rng(self.seed)
        if self.csv:
            path = Path(self.csv)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            d = load_csv(path, self.target)
        else:
            if not self.ground_truth or not self.variables:
                raise ConfigError(f"problem {self.name!r}: needs a csv or a ground truth with variables")
            truth = self.truth_expr()
            ranges = {k: tuple(v) for k, v in self.ranges.items()}
            d = sample_dataset(truth, self.variables, self.n_samples, rng, ranges, self.target)
        if self.noise:
            d = add_target_noise(d, self.noise, rng)
        if self.distractors:
            pool = [f"noise_{i}" for i in range(self.distractors)]
            d = add_distractors(d, self.distractors, pool, rng)
        return d


def load_suite(path) -> list:
    """Read a JSON suite: either a list of problems or ``{"problems": [...]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("problems", [])
    known = set(Problem.__dataclass_fields__)
    problems = []
    for rec in data:
        unknown = set(rec) - known
        if unknown:
            raise ConfigError(f"unknown problem fields: {sorted(unknown)}")
        problems.append(Problem(**rec))
    return problems


def save_suite(problems, path) -> None:
    from dataclasses import asdict

    Path(path).write_text(json.dumps({"problems": [asdict(p) for p in problems]}, indent=2) + "\n", encoding="utf-8")


REPORT_COLUMNS = ["name", "exact_solve", "mse_solved", "r2", "loss", "complexity", "expression", "category", "seconds"]


@dataclass
class ReportRow:
    name: str
    exact_solve: bool = False
    mse_solved: bool = False
    r2: float = -math.inf
    loss: float = math.inf
    complexity: int = 0
    expression: str = ""
    category: str = ""
    seconds: float = 0.0
    iterations_used: int = 0
    error: str = ""
    result: object = field(default=None, repr=False, compare=False)

    def as_record(self) -> dict:
        return {
            "name": self.name,
            "exact_solve": self.exact_solve,
            "mse_solved": self.mse_solved,
            "r2": self.r2,
            "loss": self.loss,
            "complexity": self.complexity,
            "expression": self.expression,
            "category": self.category,
            "seconds": round(self.seconds, 3),
        }


@dataclass
class Report:
    rows: list

    @property
    def exact_solves(self) -> int:
        return sum(r.exact_solve for r in self.rows)

    @property
    def mse_solves(self) -> int:
        return sum(r.mse_solved for r in self.rows)

    def summary(self) -> dict:
        return {"problems": len(self.rows), "exact_solve": self.exact_solves, "mse_solved": self.mse_solves,
                "errors": sum(bool(r.error) for r in self.rows)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(r.as_record())


def _run_problem(problem: Problem, cfg: RunConfig, backend, base_dir, early_stop) -> ReportRow:
    from .orchestrator import run

    row = ReportRow(problem.name)
    t0 = time.monotonic()
    try:
        d = problem.dataset(base_dir)
        pcfg = copy.deepcopy(cfg)
        pcfg.hints = list(cfg.hints) + list(problem.hints)
        result = run(pcfg, d, backend)
        best = result.best
        row.result = result
        row.loss, row.complexity, row.expression = best.loss, best.complexity, best.text
        row.iterations_used = result.iterations_used
        row.mse_solved = best.loss < early_stop
        row.r2 = r_squared(best.expr, d)
        truth = problem.truth_expr(d.variable_names) if problem.ground_truth else None
        if truth is not None:
            row.exact_solve = exact_match(best.expr, truth, d)
        row.category = SolveCategory.EXACT.value if row.exact_solve else ""
    except Exception as exc:  # one bad problem must not sink the suite
        log.exception("problem %s failed", problem.name)
        row.error = f"{type(exc).__name__}: {exc}"
    row.seconds = time.monotonic() - t0
    return row


def run_benchmark(problems, cfg: RunConfig, backend=None, base_dir=None, workers: int = 1) -> Report:
    """Run every problem and collect per-problem metrics."""
    problems = list(problems)
    args = [(p, cfg, backend, base_dir, cfg.early_stop_mse) for p in problems]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda a: _run_problem(*a), args))
    else:
        rows = [_run_problem(*a) for a in args]
    return Report(rows)


# ---------------------------------------------------------------------------
# skeleton fitting

STEPS, BATCH, PARAMS, SHOTS = "train_steps", "batch_size", "total_params", "number_of_shots"


def _lasr_law(c, th):
    A, log_b, E = th
    with np.errstate(all="ignore"):
        return A / np.power(c[STEPS] / math.exp(log_b), c[SHOTS]) + E


# amplitudes are searched relative to fixed reference scales, which keeps the
# simplex well conditioned; public values are converted back
COMPUTE_REF, PARAMS_REF = 1e8, 1e9


def _chinchilla(c, th):
    a, alpha, b, beta, E = th
    with np.errstate(all="ignore"):
        return a / np.power(c[STEPS] * c[BATCH] / COMPUTE_REF, alpha) + b / np.power(c[PARAMS] / PARAMS_REF, beta) + E


def _chinchilla_public(th):
    a, alpha, b, beta, E = th
    return (a * COMPUTE_REF**alpha, alpha, b * PARAMS_REF**beta, beta, E)


def _modified_chinchilla(c, th):
    A, alpha, B, beta, E = th
    with np.errstate(all="ignore"):
        return A / np.power(c[STEPS] * c[BATCH], alpha * c[SHOTS]) + B / np.power(c[PARAMS], beta) + E


def _residual(c, th):
    return np.full(len(next(iter(c.values()))), th[0])


@dataclass
class Skeleton:
    id: str
    param_names: tuple
    variables: tuple
    func: object = field(repr=False)
    monotone_in: str | None = STEPS
    to_public: object = field(default=None, repr=False)
    init: object = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def predict(self, d: Dataset, theta) -> np.ndarray:
        cols = {n: d.column(n) for n in self.variables}
        if not cols:
            cols = {"_": d.y}
        return np.asarray(self.func(cols, np.asarray(theta, dtype=float)), dtype=float)

    def public(self, theta) -> dict:
        vals = self.to_public(theta) if self.to_public else theta
        return {n: float(v) for n, v in zip(self.param_names, vals)}


def _lasr_init(d, rng):
    t = d.column(STEPS)
    return np.array([rng.normal(0, 0.1), math.log(float(np.median(t))) + rng.normal(0, 1), float(d.y.mean()) + rng.normal(0, 0.05)])


def _chin_init(d, rng):
    return np.array([rng.normal(0, 0.1), rng.uniform(0.05, 0.5), rng.normal(0, 0.1), rng.uniform(0.05, 0.5), float(d.y.mean())])


SKELETONS = {
    "lasr_law": Skeleton("lasr_law", ("A", "B", "E"), (STEPS, SHOTS), _lasr_law,
                         to_public=lambda th: (th[0], math.exp(th[1]), th[2]), init=_lasr_init),
    "chinchilla": Skeleton("chinchilla", ("A", "alpha", "B", "beta", "E"), (STEPS, BATCH, PARAMS), _chinchilla,
                           to_public=_chinchilla_public, init=_chin_init),
    "modified_chinchilla": Skeleton("modified_chinchilla", ("A", "alpha", "B", "beta", "E"), (STEPS, BATCH, PARAMS, SHOTS),
                                    _modified_chinchilla, init=_chin_init),
    "residual_only": Skeleton("residual_only", ("E",), (), _residual, monotone_in=None,
                              init=lambda d, rng: np.array([float(d.y.mean())])),
}


def custom_skeleton(text: str, param_names, variables, monotone_in: str | None = STEPS) -> Skeleton:
    """Skeleton from an infix expression whose free parameters are named
    identifiers (e.g. ``"A / (train_steps ^ alpha) + E"``)."""
    names = tuple(variables) + tuple(param_names)
    expr = parse(text, OperatorSet(variable_names=names, **FULL_GRAMMAR))
    # parameters become extra columns; constants in the text stay fixed
    n_vars = len(variables)

    def func(cols, theta):
        n = len(next(iter(cols.values())))
        stacked = np.vstack([cols[v] for v in variables] + [np.full(n, t) for t in theta])
        with np.errstate(all="ignore"):
            return evaluate(expr, stacked.T)

    return Skeleton("custom", tuple(param_names), tuple(variables), func,
                    monotone_in=monotone_in if monotone_in in variables[:n_vars] else None,
                    init=lambda d, rng: rng.normal(0, 1, size=len(param_names)))


def get_skeleton(skeleton) -> Skeleton:
    if isinstance(skeleton, Skeleton):
        return skeleton
    try:
        return SKELETONS[skeleton]
    except KeyError:
        raise ConfigError(f"unknown skeleton {skeleton!r}; choose from {sorted(SKELETONS)}") from None


def _monotone_ok(s: Skeleton, theta, probe) -> bool:
    """Prediction must be non-decreasing in ``s.monotone_in`` across the
    training range, for every probed setting of the other variables."""
    if probe is None:
        return True
    cols, n_grid = probe
    with np.errstate(all="ignore"):
        pred = np.asarray(s.func(cols, theta), dtype=float).reshape(-1, n_grid)
    if not np.isfinite(pred).all():
        return False
    return not np.any(np.diff(pred, axis=1) < -1e-12 * (1 + np.abs(pred[:, :-1])))


def _probe(s: Skeleton, d: Dataset, max_settings: int = 32, n_grid: int = 48):
    """Columns for a grid over the monotone variable crossed with up to
    ``max_settings`` observed settings of the other variables."""
    if s.monotone_in is None:
        return None
    t = d.column(s.monotone_in)
    lo, hi = float(t.min()), float(t.max())
    grid = np.geomspace(lo, hi, n_grid) if lo > 0 else np.linspace(lo, hi, n_grid)
    other = [v for v in s.variables if v != s.monotone_in]
    if other:
        combos = np.unique(np.column_stack([d.column(v) for v in other]), axis=0)
        if len(combos) > max_settings:
            combos = combos[np.linspace(0, len(combos) - 1, max_settings).astype(int)]
    else:
        combos = np.empty((1, 0))
    cols = {v: np.repeat(combos[:, j], n_grid) for j, v in enumerate(other)}
    cols[s.monotone_in] = np.tile(grid, len(combos))
    return cols, n_grid


@dataclass
class FitResult:
    skeleton: str
    params: dict
    train_mse: float
    val_mse: float
    n_params: int
    val_mse_ci: tuple | None = None
    group_params: dict | None = None


def _fit_one(s: Skeleton, train: Dataset, restarts: int, rng, maxiter: int):
    probe = _probe(s, train)
    y = train.y

    def objective(theta):
        pred = s.predict(train, theta)
        if not np.isfinite(pred).all():
            return math.inf
        mse = float(np.mean((pred - y) ** 2))
        if not math.isfinite(mse):
            return math.inf
        if not _monotone_ok(s, theta, probe):
            return math.inf
        return mse

    best_theta, best_f = None, math.inf
    for _ in range(max(1, restarts)):
        # redraw until the start satisfies the constraints
        for _ in range(20):
            x0 = s.init(train, rng)
            f0 = objective(x0)
            if math.isfinite(f0):
                break
        else:
            continue
        x, fx = x0, f0
        # a couple of fresh-simplex restarts polish Nelder-Mead's answer
        for _ in range(3):
            res = minimize(objective, x, method="Nelder-Mead",
                           options={"maxiter": maxiter, "maxfev": maxiter, "xatol": 1e-10, "fatol": 1e-14, "adaptive": True})
            if not res.fun < fx:
                break
            x, fx = res.x, float(res.fun)
        if fx < best_f:
            best_theta, best_f = np.asarray(x, dtype=float), fx
    if best_theta is None:
        raise FitDiverged(f"{s.id}: every restart produced a non-finite or constraint-violating fit")
    return best_theta, best_f


def fit_skeleton(skeleton, train: Dataset, val: Dataset, restarts: int = 8, seed: int = 0,
                 maxiter: int | None = None, group_by: str | None = None, bootstrap: int = 0) -> FitResult:
    """Fit a skeleton's free parameters on ``train`` and score it on ``val``.

    Candidates whose prediction decreases with training steps are rejected.
    With ``group_by``, one parameter vector is fitted per distinct value of
    that column (groups unseen in training use the pooled fit).
    """
    s = get_skeleton(skeleton)
    for v in s.variables + ((group_by,) if group_by else ()):
        if v not in train.variable_names or v not in val.variable_names:
            raise ConfigError(f"skeleton {s.id} needs column {v!r}")
    rng = np.random.default_rng(seed)
    maxiter = maxiter or 400 * s.n_params
    theta, train_mse = _fit_one(s, train, restarts, rng, maxiter)
    val_pred = s.predict(val, theta)
    group_params = None
    if group_by:
        group_params = {}
        gtrain, gval = train.column(group_by), val.column(group_by)
        sq_train = np.empty(train.n_rows)
        val_pred = val_pred.copy()
        for g in np.unique(gtrain):
            mask = gtrain == g
            sub = train.take(np.flatnonzero(mask))
            try:
                th, _ = _fit_one(s, sub, max(2, restarts // 2), rng, maxiter)
            except FitDiverged:
                th = theta
            group_params[float(g)] = s.public(th)
            sq_train[mask] = (s.predict(sub, th) - sub.y) ** 2
            vmask = gval == g
            if vmask.any():
                val_pred[vmask] = s.predict(val.take(np.flatnonzero(vmask)), th)
        train_mse = float(sq_train.mean())
    sq = (val_pred - val.y) ** 2
    val_mse = float(np.mean(sq)) if np.isfinite(sq).all() else math.inf
    ci = None
    if bootstrap:
        boots = [float(np.mean(sq[rng.integers(0, len(sq), len(sq))])) for _ in range(bootstrap)]
        ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return FitResult(s.id, s.public(theta), float(train_mse), val_mse, s.n_params, ci, group_params)


def format_fit_table(results) -> str:
    """Plain-text table: skeleton, validation MSE, free-parameter count."""
    lines = [f"{'Scaling Law Skeleton':<24} {'MSE Loss':>22} {'Free Parameters':>16}"]
    for r in results:
        mse = f"{r.val_mse:.5f}"
        if r.val_mse_ci:
            half = (r.val_mse_ci[1] - r.val_mse_ci[0]) / 2
            mse += f" ± {half:.5f}"
        lines.append(f"{r.skeleton:<24} {mse:>22} {r.n_params:>16}")
    return "\n".join(lines)

