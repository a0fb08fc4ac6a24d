"""The concept library: Pareto extraction, abstraction, evolution and sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from .errors import LlmError
from .evolve import Hypothesis, Population

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Concept:
    text: str
    created_iteration: int
    id: int

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("concept text must be non-empty")


@dataclass
class ConceptLibrary:
    concepts: list = field(default_factory=list)
    K: int = 20
    next_id: int = 0

    def __len__(self):
        return len(self.concepts)

    def add(self, text: str, iteration: int) -> Concept:
        c = Concept(text.strip(), iteration, self.next_id)
        self.next_id += 1
        self.concepts.append(c)
        return c

    def recent(self) -> list:
        return self.concepts[-self.K:] if self.K else []

    def older(self) -> list:
        return self.concepts[:-self.K] if len(self.concepts) > self.K else []

    def sample(self, l: int, rng) -> list:
        return sample_concepts(self, l, rng)

    def snapshot(self) -> "ConceptLibrary":
        return ConceptLibrary(list(self.concepts), self.K, self.next_id)

    def to_records(self) -> list:
        return [{"iteration": c.created_iteration, "id": c.id, "text": c.text} for c in self.concepts]

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def init_library(hints, K: int = 20) -> ConceptLibrary:
    lib = ConceptLibrary(K=K)
    for h in hints or []:
        if h and h.strip():
            lib.add(h, 0)
    return lib


def sample_concepts(lib: ConceptLibrary, l: int, rng) -> list:
    """Uniform sample without replacement from the K most recent concepts."""
    if l < 1:
        raise ValueError("l must be >= 1")
    pool = lib.recent()
    if not pool:
        return []
    k = min(l, len(pool))
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)].text for i in idx]


# ---------------------------------------------------------------------------
# Pareto frontier


@dataclass
class ParetoFront:
    best: list
    worst: list


def _members(pops):
    for pop in pops:
        if isinstance(pop, Population):
            yield from pop.members
        elif isinstance(pop, Hypothesis):
            yield pop
        else:
            yield from pop


def pareto_filter(hyps) -> list:
    """Non-dominated hypotheses under (complexity, loss), sorted by complexity.

    Equal (complexity, loss) pairs are collapsed to one representative.
    """
    ordered = sorted(hyps, key=lambda h: (h.complexity, h.loss, h.text))
    front = []
    best_loss = math.inf
    for h in ordered:
        if h.loss < best_loss:
            if front and front[-1].complexity == h.complexity:
                continue
            front.append(h)
            best_loss = h.loss
    return front


def extract_pareto(pops, n_worst: int = 5) -> ParetoFront:
    """Pareto-optimal members of all populations plus the worst finite-loss ones."""
    seen = {}
    for h in _members(pops):
        key = h.text
        if key not in seen or h.loss < seen[key].loss:
            seen[key] = h
    if not seen:
        raise ValueError("no hypotheses to extract from")
    uniq = list(seen.values())
    finite = [h for h in uniq if math.isfinite(h.loss)]
    if finite:
        best = pareto_filter(finite)
    else:
        best = [min(uniq, key=lambda h: (h.complexity, h.text))]
    worst = sorted(finite, key=lambda h: (-h.loss, h.complexity, h.text))[:max(0, n_worst)]
    return ParetoFront(best, worst)


def frontier_scores(f: ParetoFront) -> list:
    """Negative log-loss slope between consecutive front members."""
    scores = []
    for i, h in enumerate(f.best):
        if i == 0:
            scores.append(0.0)
            continue
        prev = f.best[i - 1]
        dc = h.complexity - prev.complexity
        la = math.log(max(h.loss, 1e-300))
        lb = math.log(max(prev.loss, 1e-300))
        scores.append(max(0.0, -(la - lb) / dc) if dc > 0 else 0.0)
    return scores


# ---------------------------------------------------------------------------
# LLM-driven library growth


def _concept_bindings(lib, ops, rng, l, concepts=None, good=None, bad=None):
    from .llmops import PromptBindings, operator_description

    return PromptBindings(
        concepts=concepts if concepts is not None else lib.sample(l, rng),
        variables=", ".join(ops.variable_names),
        operators=operator_description(ops),
        good_expressions=good,
        bad_expressions=bad,
    )


def abstract_concept(f: ParetoFront, lib: ConceptLibrary, backend, cfg, rng, ops, iteration: int = 0):
    """Summarise what separates the front from the worst exemplars.

    Appends the reply to ``lib`` and returns the new Concept, or ``None`` if
    the backend failed.
    """
    from .llmops import load_template, render_prompt

    if not f.best:
        raise ValueError("frontier is empty")
    if backend is None:
        return None
    good = [h.text for h in f.best]
    bad = [h.text for h in f.worst] or ["(none)"]
    b = _concept_bindings(lib, ops, rng.spawn(1)[0], cfg.llm.n_concepts, good=good, bad=bad)
    prompt = render_prompt(load_template("abstraction", cfg.llm.prompt_dir), b)
    try:
        text = backend.complete(prompt)
    except LlmError as exc:
        log.debug("concept abstraction failed: %s", exc)
        return None
    if not text or not text.strip():
        return None
    return lib.add(text, iteration)


def _idea_lines(text: str) -> list:
    from .llmops import _PREFIX_RE

    out = []
    for raw in text.splitlines():
        line = _PREFIX_RE.sub("", raw.strip(), count=1).strip()
        if line and not line.startswith("```"):
            out.append(line)
    return out


def evolve_concepts(lib: ConceptLibrary, backend, cfg, rng, ops, iteration: int = 0) -> list:
    """Derive new concepts from older ones (outside the recency window).

    Every non-empty reply line becomes a concept. No-op when there are no
    older concepts or the backend fails.
    """
    from .llmops import load_template, render_prompt

    pool = lib.older()
    if not pool or backend is None:
        return []
    n = cfg.concepts.evolution_inputs or cfg.llm.n_concepts
    idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    chosen = [pool[int(i)].text for i in idx]
    prompt = render_prompt(load_template("evolution", cfg.llm.prompt_dir), _concept_bindings(lib, ops, rng, n, concepts=chosen))
    try:
        text = backend.complete(prompt)
    except LlmError as exc:
        log.debug("concept evolution failed: %s", exc)
        return []
    return [lib.add(line, iteration) for line in _idea_lines(text or "")]
