"""Multi-population genetic search over expression trees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .config import MUTATION_CATEGORIES, MutationWeights, RunConfig
from .exprcore import (
    Binary,
    Constant,
    Expr,
    OperatorSet,
    Unary,
    Variable,
    compile_with_constants,
    constants,
    evaluate,
    format_expr,
    get_at,
    node_paths,
    random_expr,
    random_leaf,
    replace_at,
    simplify,
    with_constants,
)

LOSS_FLOOR = 1e-30


def mse_loss(e: Expr, d) -> float:
    """Mean squared error on ``d``; +inf if any row evaluates non-finite."""
    pred = evaluate(e, d)
    if not np.isfinite(pred).all():
        return math.inf
    with np.errstate(all="ignore"):
        loss = float(np.mean((pred - d.y) ** 2))
    return loss if math.isfinite(loss) else math.inf


def posterior_score(loss: float, complexity: int, parsimony: float) -> float:
    """Negative log-posterior up to a constant: ln(loss) + parsimony * complexity."""
    if parsimony < 0:
        raise ValueError("parsimony must be >= 0")
    if not math.isfinite(loss):
        return math.inf
    return math.log(loss + LOSS_FLOOR) + parsimony * complexity


@dataclass(frozen=True)
class Hypothesis:
    expr: Expr
    loss: float
    complexity: int
    score: float

    @classmethod
    def from_expr(cls, expr: Expr, d, parsimony: float) -> "Hypothesis":
        loss = mse_loss(expr, d)
        c = expr.size
        return cls(expr, loss, c, posterior_score(loss, c, parsimony))

    @property
    def text(self) -> str:
        return format_expr(self.expr)


@dataclass
class Population:
    members: list
    rng: np.random.Generator
    temperature: float = 1.0
    births: list = field(default_factory=list)
    clock: int = 0

    def __post_init__(self):
        if not self.births:
            self.births = list(range(len(self.members)))
            self.clock = len(self.members)

    def __len__(self):
        return len(self.members)

    def best_index(self) -> int:
        return min(range(len(self.members)), key=lambda i: (self.members[i].score, self.members[i].complexity))

    def best(self) -> Hypothesis:
        return self.members[self.best_index()]

    def replace(self, i: int, h: Hypothesis) -> None:
        self.members[i] = h
        self.births[i] = self.clock
        self.clock += 1

    def oldest_index(self, exclude: int) -> int:
        order = sorted(range(len(self.members)), key=lambda i: self.births[i])
        for i in order:
            if i != exclude:
                return i
        return order[0]


def operator_set(cfg: RunConfig, d) -> OperatorSet:
    return OperatorSet(tuple(cfg.binary_ops), tuple(cfg.unary_ops), d.variable_names)


def random_population(ops: OperatorSet, d, n: int, rng, cfg: RunConfig, seeds=()) -> Population:
    exprs = list(seeds)[:n]
    while len(exprs) < n:
        exprs.append(random_expr(ops, int(rng.integers(2, cfg.init_depth + 1)) if cfg.init_depth > 1 else 1, rng))
    members = [Hypothesis.from_expr(_prepare(e, d, cfg, rng), d, cfg.parsimony) for e in exprs]
    return Population(members, rng, temperature=cfg.anneal_temperature)


# ---------------------------------------------------------------------------
# mutation


def _within_caps(e: Expr, cfg) -> bool:
    if cfg is None:
        return True
    return e.size <= cfg.max_complexity and e.depth <= cfg.max_depth


def _random_op_node(ops: OperatorSet, child: Expr, rng) -> Expr:
    n_un, n_bin = len(ops.unary_ops), len(ops.binary_ops)
    if n_un and rng.random() < n_un / (n_un + 2 * n_bin):
        return Unary(ops.unary_ops[int(rng.integers(n_un))], child)
    op = ops.binary_ops[int(rng.integers(n_bin))]
    leaf = random_leaf(ops, rng)
    return Binary(op, child, leaf) if rng.random() < 0.5 else Binary(op, leaf, child)


def _mutate_constant(e, ops, rng, cfg):
    paths = [p for p, n in node_paths(e) if isinstance(n, Constant)]
    if not paths:
        return e
    path = paths[int(rng.integers(len(paths)))]
    v = get_at(e, path).value
    factor = 2.0 ** rng.uniform(-1.0, 1.0)
    new = v * factor if rng.random() < 0.5 else v / factor
    if rng.random() < 0.1:
        new = -new
    if new == 0.0:
        new = float(rng.normal())
    return replace_at(e, path, Constant(new))


def _mutate_operator(e, ops, rng, cfg):
    paths = [(p, n) for p, n in node_paths(e) if isinstance(n, (Unary, Binary))]
    if not paths:
        return e
    path, node = paths[int(rng.integers(len(paths)))]
    if isinstance(node, Unary):
        choices = [op for op in ops.unary_ops if op != node.op]
        if not choices:
            return e
        return replace_at(e, path, Unary(choices[int(rng.integers(len(choices)))], node.child))
    choices = [op for op in ops.binary_ops if op != node.op]
    if not choices:
        return e
    return replace_at(e, path, Binary(choices[int(rng.integers(len(choices)))], node.left, node.right))


def _add_node_append(e, ops, rng, cfg):
    leaves = [(p, n) for p, n in node_paths(e) if isinstance(n, (Constant, Variable))]
    path, leaf = leaves[int(rng.integers(len(leaves)))]
    return replace_at(e, path, _random_op_node(ops, leaf, rng))


def _add_node_prepend(e, ops, rng, cfg):
    return _random_op_node(ops, e, rng)


def _add_node_insert(e, ops, rng, cfg):
    nodes = node_paths(e)
    path, node = nodes[int(rng.integers(len(nodes)))]
    return replace_at(e, path, _random_op_node(ops, node, rng))


def _delete_subtree(e, ops, rng, cfg):
    nodes = node_paths(e)
    inner = [(p, n) for p, n in nodes if isinstance(n, (Unary, Binary))]
    path, _ = (inner or nodes)[int(rng.integers(len(inner or nodes)))]
    return replace_at(e, path, random_leaf(ops, rng))


def _init_new_tree(e, ops, rng, cfg):
    depth = cfg.init_depth if cfg is not None else 3
    return random_expr(ops, depth, rng)


_MUTATIONS = {
    "mutate_constant": _mutate_constant,
    "mutate_operator": _mutate_operator,
    "add_node_append": _add_node_append,
    "add_node_prepend": _add_node_prepend,
    "add_node_insert": _add_node_insert,
    "delete_subtree": _delete_subtree,
    "simplify": lambda e, ops, rng, cfg: simplify(e),
    "init_new_tree": _init_new_tree,
    "do_nothing": lambda e, ops, rng, cfg: e,
}


def choose_mutation(w: MutationWeights, rng) -> str:
    p = np.asarray(w.as_list(), dtype=float)
    return MUTATION_CATEGORIES[int(rng.choice(len(p), p=p / p.sum()))]


def mutate_with_category(h, w: MutationWeights, ops: OperatorSet, rng, cfg=None, attempts: int = 10):
    e = h.expr if isinstance(h, Hypothesis) else h
    category = choose_mutation(w, rng)
    func = _MUTATIONS[category]
    for _ in range(attempts):
        out = func(e, ops, rng, cfg)
        if _within_caps(out, cfg):
            return out, category
    return e, category


def mutate(h, w: MutationWeights, ops: OperatorSet, rng, cfg=None) -> Expr:
    """Apply one randomly chosen symbolic mutation (chosen with probability
    proportional to ``w``). Results that break the size caps are retried and
    finally abandoned in favour of the input."""
    return mutate_with_category(h, w, ops, rng, cfg)[0]


def crossover(a: Expr, b: Expr, rng):
    """Swap a uniformly chosen subtree of ``a`` with one of ``b``."""
    pa, pb = node_paths(a), node_paths(b)
    path_a, sub_a = pa[int(rng.integers(len(pa)))]
    path_b, sub_b = pb[int(rng.integers(len(pb)))]
    return replace_at(a, path_a, sub_b), replace_at(b, path_b, sub_a)


# ---------------------------------------------------------------------------
# constants


def optimize_constants(e: Expr, d, budget: int = 100, restarts: int = 2) -> Expr:
    """Refit the constants of ``e`` by Nelder-Mead; keep the result only if
    the loss improves."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    theta0 = np.array(constants(e), dtype=float)
    if theta0.size == 0:
        return e
    f = compile_with_constants(e, d.variable_names)
    cols, y = d.columns, d.y

    def objective(theta):
        with np.errstate(all="ignore"):
            pred = f(cols, theta)
            r = float(np.mean((pred - y) ** 2))
        return r if math.isfinite(r) else 1e300

    start = objective(theta0)
    best_x, best_f = theta0, start
    for _ in range(1 + max(0, restarts)):
        res = minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={"maxfev": budget, "xatol": 1e-14, "fatol": 0.0},
        )
        if res.fun < best_f:
            best_x, best_f = np.array(res.x, dtype=float), float(res.fun)
        else:
            break
    if best_f >= start or not np.isfinite(best_x).all():
        return e
    return with_constants(e, best_x)


def _prepare(e: Expr, d, cfg: RunConfig, rng) -> Expr:
    e = simplify(e)
    if cfg.optimize_probability >= 1.0 or rng.random() < cfg.optimize_probability:
        e = optimize_constants(e, d, cfg.optimizer_budget, cfg.optimizer_restarts)
    return e


# ---------------------------------------------------------------------------
# search


def tournament(pop: Population, size: int) -> Hypothesis:
    n = len(pop.members)
    idx = pop.rng.choice(n, size=min(size, n), replace=False)
    best = min(idx, key=lambda i: (pop.members[i].score, pop.members[i].complexity))
    return pop.members[int(best)]


def _accept(child: Hypothesis, parent: Hypothesis, temperature: float, rng) -> bool:
    if not math.isfinite(child.score):
        return False
    if not math.isfinite(parent.score):
        return True
    delta = child.score - parent.score
    if delta <= 0:
        return True
    if temperature <= 0:
        return False
    return rng.random() < math.exp(-delta / temperature)


def sr_cycle(pop: Population, d, lib, p: float, backend, cfg: RunConfig, ops: OperatorSet | None = None) -> Population:
    """One evolve-simplify-optimise pass over ``pop`` (in place; returned).

    Each mutation or crossover event is swapped for its LLM-guided
    counterpart with probability ``p``.
    """
    from .llmops import llm_crossover, llm_mutate

    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    ops = ops or operator_set(cfg, d)
    rng = pop.rng
    n = len(pop.members)
    for _ in range(cfg.cycles_per_iteration):
        gated = p > 0 and backend is not None and rng.random() < p
        if n >= 2 and rng.random() < cfg.crossover_probability:
            a = tournament(pop, cfg.tournament_size)
            b = tournament(pop, cfg.tournament_size)
            if gated:
                offspring = [(llm_crossover(a.expr, b.expr, lib, ops, backend, cfg, rng), a)]
            else:
                c1, c2 = crossover(a.expr, b.expr, rng)
                offspring = [(c1, a), (c2, b)]
        else:
            parent = tournament(pop, cfg.tournament_size)
            if gated:
                child = llm_mutate(parent.expr, lib, ops, backend, cfg, rng)
            else:
                child = mutate(parent, cfg.mutation_weights, ops, rng, cfg)
            offspring = [(child, parent)]

        for child, parent in offspring:
            if not _within_caps(child, cfg):
                continue
            if child is parent.expr:
                continue
            h = Hypothesis.from_expr(_prepare(child, d, cfg, rng), d, cfg.parsimony)
            if _accept(h, parent, pop.temperature, rng):
                best = pop.best_index()
                pop.replace(pop.oldest_index(exclude=best), h)
    pop.temperature *= cfg.anneal_decay
    return pop


def migrate(pops: list, fraction: float, rng) -> None:
    """Replace the worst ``ceil(fraction * n)`` members of every population
    with copies drawn from the union of all populations' top 10%."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if fraction == 0 or len(pops) < 2:
        return
    pool = []
    for pop in pops:
        order = sorted(range(len(pop.members)), key=lambda i: (pop.members[i].score, pop.members[i].complexity))
        top = max(1, math.ceil(0.1 * len(pop.members)))
        pool.extend(pop.members[i] for i in order[:top])
    for pop in pops:
        n = len(pop.members)
        m = min(math.ceil(fraction * n), n - 1)
        if m <= 0:
            continue
        worst = sorted(range(n), key=lambda i: (pop.members[i].score, pop.members[i].complexity), reverse=True)[:m]
        for i in worst:
            pop.replace(i, pool[int(rng.integers(len(pool)))])
