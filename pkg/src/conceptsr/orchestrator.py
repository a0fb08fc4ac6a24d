"""The outer loop: alternate hypothesis search with concept abstraction/evolution."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .concepts import (
    ConceptLibrary,
    ParetoFront,
    abstract_concept,
    evolve_concepts,
    extract_pareto,
    frontier_scores,
    init_library,
)
from .config import RunConfig
from .errors import ConfigError
from .evolve import Hypothesis, migrate, operator_set, posterior_score, random_population, sr_cycle
from .llmops import llm_init

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    best: Hypothesis
    frontier: ParetoFront
    library: ConceptLibrary
    history: list = field(default_factory=list)
    solved: bool = False
    iterations_used: int = 0

    def to_dict(self) -> dict:
        scores = frontier_scores(self.frontier)
        return {
            "best": _hyp_record(self.best),
            "solved": self.solved,
            "iterations_used": self.iterations_used,
            "frontier": [dict(_hyp_record(h), frontier_score=s) for h, s in zip(self.frontier.best, scores)],
            "worst": [_hyp_record(h) for h in self.frontier.worst],
            "concepts": self.library.to_records(),
            "history": self.history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir, config: RunConfig | None = None, figures: bool = True) -> Path:
        """Write summary, frontier table, concept log, history and figures."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(self.to_json() + "\n", encoding="utf-8")
        summary = {
            "expression": self.best.text,
            "loss": self.best.loss,
            "complexity": self.best.complexity,
            "solved": self.solved,
            "iterations_used": self.iterations_used,
            "concepts": len(self.library),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        if config is not None:
            (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
        with open(out / "frontier.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["complexity", "loss", "score", "expression"])
            for h, s in zip(self.frontier.best, frontier_scores(self.frontier)):
                w.writerow([h.complexity, repr(h.loss), repr(s), h.text])
        self.library.write_log(out / "concepts.jsonl")
        if self.history:
            with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=list(self.history[0]))
                w.writeheader()
                w.writerows(self.history)
        if figures:
            from . import plots

            plots.plot_frontier(self.frontier, out / "frontier.png")
            if self.history:
                plots.plot_history(self.history, out / "history.png")
        return out


def _hyp_record(h: Hypothesis) -> dict:
    return {"expression": h.text, "loss": h.loss, "complexity": h.complexity, "score": h.score}


def best_expression(f: ParetoFront, mode: str = "min_loss", parsimony: float = 0.0) -> Hypothesis:
    """Pick the final answer from the front, by loss or by posterior score."""
    if not f.best:
        raise ValueError("frontier is empty")
    if mode == "min_loss":
        return min(f.best, key=lambda h: (h.loss, h.complexity))
    if mode == "min_score":
        return min(f.best, key=lambda h: (posterior_score(h.loss, h.complexity, parsimony), h.complexity))
    raise ValueError(f"unknown selection mode {mode!r}")


class HallOfFame:
    """Best hypothesis seen so far at each complexity."""

    def __init__(self):
        self.by_size = {}

    def update(self, hyps) -> None:
        for h in hyps:
            cur = self.by_size.get(h.complexity)
            if math.isfinite(h.loss) and (cur is None or h.loss < cur.loss):
                self.by_size[h.complexity] = h

    def members(self) -> list:
        return [self.by_size[c] for c in sorted(self.by_size)]


def _population_rngs(seed: int, k: int):
    root = np.random.SeedSequence(seed)
    master, pops = root.spawn(2)
    # one child per population index, so K changes do not disturb other streams
    children = [np.random.SeedSequence(entropy=pops.entropy, spawn_key=pops.spawn_key + (i,)) for i in range(k)]
    return np.random.default_rng(master), [np.random.default_rng(c) for c in children]


def run(cfg: RunConfig, d, backend=None) -> RunResult:
    """Run the full search on dataset ``d``."""
    try:
        cfg.validate()
    except ConfigError:
        raise
    ops = operator_set(cfg, d)
    start = time.monotonic()
    master_rng, pop_rngs = _population_rngs(cfg.seed, cfg.n_populations)
    p = cfg.p if backend is not None else 0.0

    lib = init_library(cfg.hints, K=cfg.concepts.recency_window)

    pops = []
    for rng in pop_rngs:
        n_llm = int(rng.binomial(cfg.population_size, p)) if p > 0 else 0
        seeds = llm_init(lib, ops, n_llm, backend, cfg, rng, d) if n_llm else []
        pops.append(random_population(ops, d, cfg.population_size, rng, cfg, seeds))

    hof = HallOfFame()
    for pop in pops:
        hof.update(pop.members)

    history = []
    frontier = extract_pareto(pops + [hof.members()], cfg.concepts.n_worst)
    solved = False
    iterations_used = 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(1, cfg.iterations + 1):
            snapshot = lib.snapshot()
            before = backend.counters() if backend is not None else None
            if pool is not None:
                list(pool.map(lambda pop: sr_cycle(pop, d, snapshot, p, backend, cfg, ops), pops))
            else:
                for pop in pops:
                    sr_cycle(pop, d, snapshot, p, backend, cfg, ops)
            for pop in pops:
                hof.update(pop.members)

            frontier = extract_pareto(pops + [hof.members()], cfg.concepts.n_worst)
            n_before = len(lib)
            if backend is not None and p > 0:
                abstract_concept(frontier, lib, backend, cfg, master_rng, ops, it)
                for _ in range(cfg.concept_evolution_steps):
                    evolve_concepts(lib, backend, cfg, master_rng, ops, it)
            migrate(pops, cfg.migrate_fraction, master_rng)

            best = best_expression(frontier, "min_loss")
            after = backend.counters() if backend is not None else None
            history.append({
                "iteration": it,
                "best_loss": best.loss,
                "best_complexity": best.complexity,
                "best_expression": best.text,
                "llm_calls": after["calls"] - before["calls"] if backend is not None else 0,
                "llm_failures": after["failures"] - before["failures"] if backend is not None else 0,
                "llm_fallbacks": after["fallbacks"] - before["fallbacks"] if backend is not None else 0,
                "concepts_added": len(lib) - n_before,
            })
            iterations_used = it
            log.info("iteration %d: loss=%.4g complexity=%d %s", it, best.loss, best.complexity, best.text)
            if best.loss < cfg.early_stop_mse:
                solved = True
                break
            if cfg.time_budget is not None and time.monotonic() - start > cfg.time_budget:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    chosen = best_expression(frontier, cfg.selection, cfg.parsimony)
    return RunResult(chosen, frontier, lib, history, solved or chosen.loss < cfg.early_stop_mse, iterations_used)
