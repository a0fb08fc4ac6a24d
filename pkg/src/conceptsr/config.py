"""Run configuration with dotted-key overrides and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

MUTATION_CATEGORIES = (
    "mutate_constant",
    "mutate_operator",
    "add_node_append",
    "add_node_prepend",
    "add_node_insert",
    "delete_subtree",
    "simplify",
    "init_new_tree",
    "do_nothing",
)


@dataclass
class MutationWeights:
    mutate_constant: float = 1.0
    mutate_operator: float = 1.0
    add_node_append: float = 1.0
    add_node_prepend: float = 1.0
    add_node_insert: float = 1.0
    delete_subtree: float = 1.0
    simplify: float = 1.0
    init_new_tree: float = 1.0
    do_nothing: float = 1.0

    def as_list(self) -> list:
        return [float(getattr(self, c)) for c in MUTATION_CATEGORIES]

    def validate(self):
        w = self.as_list()
        if any(v < 0 for v in w) or sum(w) <= 0:
            raise ConfigError("mutation weights must be non-negative with a positive sum")

    @classmethod
    def only(cls, category: str) -> "MutationWeights":
        if category not in MUTATION_CATEGORIES:
            raise ConfigError(f"unknown mutation category {category!r}")
        return cls(**{c: float(c == category) for c in MUTATION_CATEGORIES})


@dataclass
class LlmConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 512
    timeout: float = 30.0
    max_retries: int = 3
    max_inflight: int = 4
    n_concepts: int = 5
    include_data: bool = False
    data_rows: int = 10
    prompt_dir: str | None = None
    replay_path: str | None = None


@dataclass
class ConceptConfig:
    recency_window: int = 20
    n_worst: int = 5
    evolution_inputs: int | None = None


@dataclass
class RunConfig:
    iterations: int = 40
    n_populations: int = 4
    population_size: int = 30
    cycles_per_iteration: int = 60
    concept_evolution_steps: int = 1
    p: float = 0.01
    hints: list = field(default_factory=list)
    seed: int = 0
    binary_ops: list = field(default_factory=lambda: ["add", "sub", "mul", "div"])
    unary_ops: list = field(default_factory=lambda: ["sin", "cos", "exp", "log", "sqrt"])
    parsimony: float = 0.0032
    tournament_size: int = 10
    crossover_probability: float = 0.1
    anneal_temperature: float = 1.0
    anneal_decay: float = 0.99
    migrate_fraction: float = 0.05
    max_complexity: int = 30
    max_depth: int = 10
    init_depth: int = 3
    optimizer_budget: int = 100
    optimizer_restarts: int = 2
    optimize_probability: float = 1.0
    early_stop_mse: float = 1e-11
    time_budget: float | None = None
    selection: str = "min_loss"
    workers: int = 1
    mutation_weights: MutationWeights = field(default_factory=MutationWeights)
    llm: LlmConfig = field(default_factory=LlmConfig)
    concepts: ConceptConfig = field(default_factory=ConceptConfig)

    def validate(self) -> "RunConfig":
        checks = [
            (self.iterations >= 1, "iterations must be >= 1"),
            (self.n_populations >= 1, "n_populations must be >= 1"),
            (self.population_size >= 2, "population_size must be >= 2"),
            (self.cycles_per_iteration >= 1, "cycles_per_iteration must be >= 1"),
            (self.concept_evolution_steps >= 0, "concept_evolution_steps must be >= 0"),
            (0.0 <= self.p <= 1.0, "p must lie in [0, 1]"),
            (self.parsimony >= 0, "parsimony must be >= 0"),
            (self.tournament_size >= 1, "tournament_size must be >= 1"),
            (0.0 <= self.crossover_probability <= 1.0, "crossover_probability must lie in [0, 1]"),
            (0.0 < self.anneal_decay <= 1.0, "anneal_decay must lie in (0, 1]"),
            (0.0 <= self.migrate_fraction <= 1.0, "migrate_fraction must lie in [0, 1]"),
            (self.max_complexity >= 1, "max_complexity must be >= 1"),
            (self.max_depth >= 1, "max_depth must be >= 1"),
            (1 <= self.init_depth <= self.max_depth, "init_depth must lie in [1, max_depth]"),
            (self.optimizer_budget >= 1, "optimizer_budget must be >= 1"),
            (0.0 <= self.optimize_probability <= 1.0, "optimize_probability must lie in [0, 1]"),
            (self.selection in ("min_loss", "min_score"), "selection must be min_loss or min_score"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.llm.n_concepts >= 1, "llm.n_concepts must be >= 1"),
            (self.llm.max_inflight >= 1, "llm.max_inflight must be >= 1"),
            (self.concepts.recency_window >= 1, "concepts.recency_window must be >= 1"),
            (self.concepts.n_worst >= 0, "concepts.n_worst must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        self.mutation_weights.validate()
        return self

    # -- (de)serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for key, value in _flatten(data):
            set_dotted(cfg, key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


def _flatten(data: dict, prefix: str = ""):
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and dotted in ("mutation_weights", "llm", "concepts"):
            yield from _flatten(value, dotted + ".")
        else:
            yield dotted, value


def _coerce(current, value, key):
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            if current is not None and not isinstance(current, list):
                raise ConfigError(f"cannot parse value {value!r} for {key}") from None
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} expects an integer")
        return value
    if isinstance(current, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{key} expects a number")
        return float(value)
    if isinstance(current, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list")
        return list(value)
    return value


def set_dotted(cfg: RunConfig, key: str, value) -> None:
    """Assign ``value`` to a dotted key like ``mutation_weights.simplify``."""
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    names = {f.name for f in fields(target)}
    if name not in names or dataclasses.is_dataclass(getattr(target, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(getattr(target, name), value, key))
