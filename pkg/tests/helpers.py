"""Data generators and oracles shared by the test modules."""

import math

import numpy as np

from conceptsr.data import Dataset, sample_dataset
from conceptsr.evolve import Hypothesis
from conceptsr.exprcore import Constant, OperatorSet, parse

FULL_OPS = dict(binary_ops=("add", "sub", "mul", "div", "pow"), unary_ops=("neg", "sin", "cos", "exp", "log", "sqrt"))

COULOMB_VARS = ("q1", "q2", "epsilon", "r")


def coulomb_dataset(n=500, seed=0):
    ops = OperatorSet(variable_names=COULOMB_VARS, **FULL_OPS)
    truth = parse("(q1 * q2) / (4 * pi * epsilon * r ^ 2)", ops)
    d = sample_dataset(truth, COULOMB_VARS, n, np.random.default_rng(seed), {v: (1.0, 5.0) for v in COULOMB_VARS})
    return truth, d


# parameters of the three-parameter scaling law used for self-consistency checks
LAW_A, LAW_B, LAW_E = -0.0248235, 116050.999, 0.360124


def scaling_dataset(n=20000, seed=0, noise=0.01, steps=(5e4, 5e5)):
    """Rows of (train_steps, batch_size, total_params, number_of_shots) -> score
    drawn from ``A / (t / B) ** shots + E`` plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.exp(rng.uniform(np.log(steps[0]), np.log(steps[1]), n))
    shots = rng.integers(0, 4, n).astype(float)
    batch = rng.choice([256.0, 512.0, 1024.0], n)
    params = rng.choice([4e8, 1e9, 2e9, 8e9], n)
    score = LAW_A / (t / LAW_B) ** shots + LAW_E + rng.normal(0, noise, n)
    X = np.column_stack([t, batch, params, shots])
    return Dataset(("train_steps", "batch_size", "total_params", "number_of_shots"), X, score, "score")


def brute_force_front(hyps):
    finite = [h for h in hyps if math.isfinite(h.loss)]
    keep = []
    for h in finite:
        dominated = any(
            (o.complexity <= h.complexity and o.loss <= h.loss) and (o.complexity < h.complexity or o.loss < h.loss)
            for o in finite
        )
        if not dominated:
            keep.append(h)
    # equal (complexity, loss) points collapse to one representative
    seen = {}
    for h in sorted(keep, key=lambda h: (h.complexity, h.loss, h.text)):
        seen.setdefault((h.complexity, h.loss), h)
    return sorted(seen.values(), key=lambda h: h.complexity)


def random_hypotheses(rng, n):
    out = []
    for i in range(n):
        c = int(rng.integers(1, 30))
        loss = float(rng.choice([rng.uniform(0, 10), round(rng.uniform(0, 10), 1)]))
        out.append(Hypothesis(Constant(float(i)), loss, c, 0.0))
    return out
