"""Top-K comparative tree search for iterative code-solution exploration."""

from tkcts.core import SearchConfig, SearchTree, SolutionNode, Status, TaskSpec
from tkcts.engine import SearchDeps, SearchOutcome, StopReason, run_search

__version__ = "0.1.0"

__all__ = [
    "SearchConfig",
    "SearchDeps",
    "SearchOutcome",
    "SearchTree",
    "SolutionNode",
    "Status",
    "StopReason",
    "TaskSpec",
    "run_search",
]
