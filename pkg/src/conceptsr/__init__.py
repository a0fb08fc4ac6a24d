"""Concept-guided symbolic regression.

Genetic search over expression trees, optionally mixed with LLM-proposed
hypotheses conditioned on a library of natural-language concepts that is
itself abstracted from, and evolved alongside, the search.
"""

from .config import LlmConfig, MutationWeights, RunConfig
from .data import Dataset, load_csv
from .exprcore import OperatorSet, complexity, evaluate, format_expr, parse, simplify
from .orchestrator import RunResult, run

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LlmConfig",
    "MutationWeights",
    "OperatorSet",
    "RunConfig",
    "RunResult",
    "complexity",
    "evaluate",
    "format_expr",
    "load_csv",
    "parse",
    "run",
    "simplify",
]
