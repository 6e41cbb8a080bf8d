"""Domain types: tasks, solution nodes, the search tree and its frontier, config, budgets."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from tkcts.errors import ConfigError, StructuralError


class Origin(str, enum.Enum):
    INITIAL = "initial"
    DEBUG = "debug"
    IMPROVE = "improve"


class Status(str, enum.Enum):
    DRAFT = "draft"
    BUGGY = "buggy"
    EXECUTABLE = "executable"
    DEAD = "dead"


class ComparatorKind(str, enum.Enum):
    RELATIVE = "relative"
    LLM_ABSOLUTE = "llm_absolute"
    RUBRIC_ABSOLUTE = "rubric_absolute"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: str | ComparatorKind) -> ComparatorKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).replace("-", "_"))
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigError("comparator_kind", f"unknown comparator {value!r} (choose from {choices})")


@dataclass
class TaskSpec:
    id: str
    description: str
    input_dir: str = "."
    output_contract: list[str] = field(default_factory=list)
    rubric: dict | None = None
    data_overview: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ConfigError("task.id", "must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskSpec:
        if not isinstance(data, dict):
            raise ConfigError("task", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"task.{key}", "unknown field")
        for key in ("id", "description"):
            if not isinstance(data.get(key), str):
                raise ConfigError(f"task.{key}", "required string")
        contract = data.get("output_contract") or []
        if not isinstance(contract, list):
            raise ConfigError("task.output_contract", "expected a list of paths")
        rubric = data.get("rubric")
        if rubric is not None and not isinstance(rubric, (dict, list)):
            raise ConfigError("task.rubric", "expected a JSON object or null")
        return cls(
            id=data["id"],
            description=data["description"],
            input_dir=str(data.get("input_dir") or "."),
            output_contract=[str(p) for p in contract],
            rubric=rubric,
            data_overview=data.get("data_overview"),
        )

    @classmethod
    def load(cls, path: str | Path) -> TaskSpec:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("task", f"cannot read {path}: {exc}") from exc
        task = cls.from_dict(data)
        input_dir = Path(task.input_dir)
        if not input_dir.is_absolute():
            input_dir = path.parent / input_dir
        if not input_dir.is_dir():
            raise ConfigError("task.input_dir", f"directory does not exist: {input_dir}")
        task.input_dir = str(input_dir.resolve())
        return task


@dataclass
class SolutionNode:
    plan: str
    code: str
    origin: Origin = Origin.INITIAL
    parent: int | None = None
    depth: int = 0
    status: Status = Status.DRAFT
    exec_report: Any = None
    rating: float = 1500.0
    debug_count: int = 0
    node_id: int | None = None
    # Absolute-comparator score; None until scored (or when scoring failed).
    score: int | None = None
    summary: str | None = None


_STATUS_RANK = {Status.EXECUTABLE: 0, Status.BUGGY: 1, Status.DRAFT: 2, Status.DEAD: 3}


class SearchTree:
    """Node store plus the frontier (priority queue) ordered by rating.

    The ordering key is ``(-value, status rank, node_id)`` where *value* is the
    Elo rating, or the absolute score when ``rank_by="score"``. Unscored nodes
    sort after every scored node in score mode.
    """

    def __init__(self, task: TaskSpec, rank_by: str = "rating"):
        if rank_by not in ("rating", "score"):
            raise ValueError(f"rank_by must be 'rating' or 'score', got {rank_by!r}")
        self.task = task
        self.rank_by = rank_by
        self.nodes: dict[int, SolutionNode] = {}
        self.frontier: list[int] = []
        self._next_id = 0

    def order_key(self, node_id: int) -> tuple:
        node = self.nodes[node_id]
        if self.rank_by == "score":
            value = float("-inf") if node.score is None else float(node.score)
        else:
            value = node.rating
        return (-value, _STATUS_RANK[node.status], node_id)

    def reorder(self) -> list[int]:
        self.frontier.sort(key=self.order_key)
        return self.frontier

    def insert(self, node: SolutionNode) -> int:
        if node.node_id is not None:
            raise StructuralError(f"node already has id {node.node_id}")
        if node.parent is not None:
            if node.parent not in self.nodes:
                raise StructuralError(f"dangling parent {node.parent}")
            expected = self.nodes[node.parent].depth + 1
            if node.depth != expected:
                raise StructuralError(f"child depth {node.depth} != parent depth + 1 ({expected})")
            if node.origin == Origin.INITIAL:
                raise StructuralError("initial nodes cannot have a parent")
        elif node.depth != 0 or node.origin != Origin.INITIAL:
            raise StructuralError("root nodes must be initial with depth 0")
        node.node_id = self._next_id
        self._next_id += 1
        self.nodes[node.node_id] = node
        if node.status != Status.DEAD:
            self.frontier.append(node.node_id)
            self.reorder()
        return node.node_id

    def remove_from_frontier(self, node_id: int) -> None:
        if node_id in self.frontier:
            self.frontier.remove(node_id)

    def mark_dead(self, node_id: int) -> None:
        self.nodes[node_id].status = Status.DEAD
        self.remove_from_frontier(node_id)

    def ranked(self, ids) -> list[int]:
        return sorted(ids, key=self.order_key)

    def executable_ids(self) -> list[int]:
        return [i for i, n in self.nodes.items() if n.status == Status.EXECUTABLE]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes.values())


def insert_node(tree: SearchTree, node: SolutionNode) -> int:
    return tree.insert(node)


@dataclass
class SamplingProfile:
    temperature: float
    top_p: float = 0.95
    max_tokens: int = 4096


def _default_profiles() -> dict[str, SamplingProfile]:
    return {
        "generator": SamplingProfile(0.5),
        "debugger": SamplingProfile(0.5),
        "summarizer": SamplingProfile(0.5),
        "judge": SamplingProfile(0.0, max_tokens=1024),
    }


@dataclass
class SearchConfig:
    n_initial: int = 5
    max_debug_steps: int = 3
    total_steps: int = 10
    k: int = 2
    comparison_budget: int | None = None
    exec_timeout_seconds: int = 900
    elo_init: float = 1500.0
    elo_k_factor: float = 32.0
    seed: int = 0
    comparator_kind: ComparatorKind = ComparatorKind.RELATIVE
    generator_model: str = "gpt-4o-2024-11-20"
    judge_model: str = "gpt-4o-2024-11-20"
    self_improve: bool = True
    double_swap: bool = False
    memory_char_cap: int = 8000
    profiles: dict[str, SamplingProfile] = field(default_factory=_default_profiles)

    def __post_init__(self):
        self.comparator_kind = ComparatorKind.parse(self.comparator_kind)
        self.validate()

    @property
    def budget(self) -> int:
        """Comparison budget; when unset, total_steps * k * 2."""
        if self.comparison_budget is None:
            return self.total_steps * self.k * 2
        return self.comparison_budget

    @property
    def budget_is_derived(self) -> bool:
        return self.comparison_budget is None

    def model_for(self, role: str) -> str:
        return self.judge_model if role == "judge" else self.generator_model

    def validate(self) -> None:
        for name in ("k", "n_initial"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        for name in ("total_steps", "max_debug_steps"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigError(name, f"must be an integer >= 0, got {value!r}")
        if self.comparison_budget is not None and (
            not isinstance(self.comparison_budget, int) or self.comparison_budget < 0
        ):
            raise ConfigError("comparison_budget", "must be an integer >= 0")
        if not self.exec_timeout_seconds or self.exec_timeout_seconds <= 0:
            raise ConfigError("exec_timeout_seconds", "must be > 0")
        if self.elo_k_factor <= 0:
            raise ConfigError("elo_k_factor", "must be > 0")
        missing = {"generator", "debugger", "summarizer", "judge"} - set(self.profiles)
        if missing:
            raise ConfigError("profiles", f"missing roles: {sorted(missing)}")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["comparator_kind"] = self.comparator_kind.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], prefix: str = "config") -> SearchConfig:
        if not isinstance(data, dict):
            raise ConfigError(prefix, "expected a JSON object")
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
            if key == "profiles":
                if not isinstance(value, dict):
                    raise ConfigError(f"{prefix}.profiles", "expected an object keyed by role")
                profiles = _default_profiles()
                for role, prof in value.items():
                    if role not in profiles or not isinstance(prof, dict):
                        raise ConfigError(f"{prefix}.profiles.{role}", "unknown role or bad profile")
                    try:
                        profiles[role] = SamplingProfile(**{**asdict(profiles[role]), **prof})
                    except TypeError as exc:
                        raise ConfigError(f"{prefix}.profiles.{role}", str(exc)) from exc
                value = profiles
            elif key in ("n_initial", "max_debug_steps", "total_steps", "k", "seed", "memory_char_cap"):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {value!r}")
            elif key in ("self_improve", "double_swap") and not isinstance(value, bool):
                raise ConfigError(f"{prefix}.{key}", f"expected a boolean, got {value!r}")
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{prefix}.{exc.path}", exc.message) from None


class Charge(str, enum.Enum):
    COMPARISON = "comparison"
    DEBUG_STEP = "debug_step"
    IMPROVE_STEP = "improve_step"


@dataclass
class BudgetLedger:
    comparison_budget: int
    total_steps: int
    comparisons_used: int = 0
    debug_steps_used: int = 0
    expansion_steps_used: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    dollars: float = 0.0

    @classmethod
    def for_config(cls, cfg: SearchConfig) -> BudgetLedger:
        return cls(comparison_budget=cfg.budget, total_steps=cfg.total_steps)

    @property
    def comparisons_left(self) -> int:
        return self.comparison_budget - self.comparisons_used

    @property
    def steps_left(self) -> int:
        return self.total_steps - self.expansion_steps_used

    def charge(self, event: Charge | str) -> bool:
        """Count one event; returns False (leaving the ledger untouched) when capped."""
        event = Charge(event)
        if event is Charge.COMPARISON:
            if self.comparisons_used >= self.comparison_budget:
                return False
            self.comparisons_used += 1
            return True
        if self.expansion_steps_used >= self.total_steps:
            return False
        self.expansion_steps_used += 1
        if event is Charge.DEBUG_STEP:
            self.debug_steps_used += 1
        return True

    def charge_tokens(self, prompt_tokens: int, completion_tokens: int,
                      price_in: float = 0.0, price_out: float = 0.0) -> None:
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        self.dollars += prompt_tokens * price_in + completion_tokens * price_out

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


EXHAUSTED = "exhausted"


def charge(ledger: BudgetLedger, event, *, tokens: tuple[int, int] | None = None,
           prices: tuple[float, float] = (0.0, 0.0)):
    """Functional form of :meth:`BudgetLedger.charge`.

    Returns the ledger on success, or the string ``"exhausted"`` when the
    increment would exceed its cap. ``event="tokens"`` never exhausts.
    """
    if event == "tokens":
        if tokens is None:
            raise ValueError("tokens event needs (prompt, completion)")
        ledger.charge_tokens(tokens[0], tokens[1], *prices)
        return ledger
    return ledger if ledger.charge(event) else EXHAUSTED
