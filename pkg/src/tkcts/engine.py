"""Top-K comparative tree search.

Loop: judge the frontier, keep the top-k, prune the rest for good, expand
each kept node by one child (debug if buggy, improve if executable), repeat
until the comparison budget, the step budget or the frontier runs out.
Then pick the final answer among executable nodes.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from tkcts import genops
from tkcts.core import (
    BudgetLedger,
    Charge,
    Origin,
    SearchConfig,
    SearchTree,
    SolutionNode,
    Status,
    TaskSpec,
)
from tkcts.execution import ExecutionReport, classify
from tkcts.judge import Comparator, JudgeContext, make_comparator
from tkcts.llm import LLMClient, PriceTable, Provider
from tkcts.prompts import TemplateSet, default_templates
from tkcts.trace import SCHEMA_VERSION, Tracer, code_hash

logger = logging.getLogger(__name__)


class StopReason(str, enum.Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    STEPS_EXHAUSTED = "steps_exhausted"
    FRONTIER_EMPTY = "frontier_empty"
    # Nothing left to expand (e.g. self-improve disabled and every kept node runs).
    STALLED = "stalled"


class Executor(Protocol):
    def run(self, node_id: int, code: str) -> ExecutionReport: ...


@dataclass
class SearchDeps:
    provider: Provider
    executor: Executor
    comparator: Comparator | None = None
    rng: np.random.Generator | None = None
    templates: TemplateSet | None = None
    price_table: PriceTable | None = None
    tracer: Tracer | None = None


@dataclass
class SearchOutcome:
    final_node: int | None
    tree: SearchTree
    ledger: BudgetLedger
    stop_reason: StopReason
    llm_calls: int = 0
    rounds: int = 0
    expanded_per_round: list[list[int]] = field(default_factory=list)

    @property
    def final(self) -> SolutionNode | None:
        return None if self.final_node is None else self.tree.nodes[self.final_node]


def stop_reason(ledger: BudgetLedger, cfg: SearchConfig, frontier: Sequence[int]) -> StopReason | None:
    if not frontier:
        return StopReason.FRONTIER_EMPTY
    if ledger.comparisons_used >= cfg.budget:
        return StopReason.BUDGET_EXHAUSTED
    if ledger.expansion_steps_used >= cfg.total_steps:
        return StopReason.STEPS_EXHAUSTED
    return None


def should_stop(ledger: BudgetLedger, cfg: SearchConfig, frontier: Sequence[int]) -> bool:
    return stop_reason(ledger, cfg, frontier) is not None


def prune_round(frontier: Sequence[int], k: int) -> tuple[list[int], list[int]]:
    keep = list(frontier[:k])
    return keep, list(frontier[k:])


class _Search:
    def __init__(self, task: TaskSpec, cfg: SearchConfig, deps: SearchDeps):
        self.task = task
        self.cfg = cfg
        self.deps = deps
        self.comparator = deps.comparator or make_comparator(cfg.comparator_kind, task.rubric)
        self.templates = deps.templates or default_templates()
        self.tracer = deps.tracer
        self.ledger = BudgetLedger.for_config(cfg)
        self.tree = SearchTree(task, rank_by=self.comparator.rank_by)
        self.llm = LLMClient(deps.provider, cfg, self.ledger, self.tracer, deps.price_table)
        self.rng = deps.rng if deps.rng is not None else np.random.default_rng(cfg.seed)
        self.ctx = JudgeContext(task, cfg, self.llm, self.ledger, self.rng, self.templates, self.tracer)

    def emit(self, kind: str, payload: dict) -> None:
        if self.tracer is not None:
            self.tracer.emit(kind, payload)

    def add_node(self, draft: genops.SolutionDraft, origin: Origin, parent: SolutionNode | None) -> int:
        node = SolutionNode(
            plan=draft.plan,
            code=draft.code,
            origin=origin,
            parent=None if parent is None else parent.node_id,
            depth=0 if parent is None else parent.depth + 1,
            rating=self.cfg.elo_init,
            debug_count=parent.debug_count if origin is Origin.DEBUG else 0,
        )
        node_id = self.tree.insert(node)
        if draft.buggy_at_birth:
            node.status = Status.BUGGY
            node.summary = "No program was produced: the response contained no code block."
        else:
            report = self.deps.executor.run(node_id, node.code)
            node.exec_report = report
            node.status = classify(report)
            self.emit("execution", {
                "node_id": node_id,
                "code_hash": code_hash(node.code),
                "status": node.status.value,
                "report": report.to_dict(),
            })
            feedback = genops.summarize_execution(self.task, node, report, self.llm, self.templates,
                                                  self.cfg.exec_timeout_seconds)
            node.summary = feedback.findings
        self.tree.reorder()
        self.emit("expand", {
            "node_id": node_id,
            "parent": node.parent,
            "origin": origin.value,
            "depth": node.depth,
            "status": node.status.value,
            "debug_count": node.debug_count,
            "plan": node.plan,
        })
        return node_id

    def initial_round(self) -> list[int]:
        drafts = genops.generate_initial_solutions(self.task, self.cfg.n_initial, self.llm, self.tree,
                                                   self.templates, self.cfg.memory_char_cap)
        return [self.add_node(d, Origin.INITIAL, None) for d in drafts]

    def expansion_round(self, keep: Sequence[int]) -> tuple[list[int], bool]:
        """One child per kept node, in order, while steps remain.

        Returns the new ids and whether any node was retired as dead.
        """
        new_ids: list[int] = []
        retired = False
        for node_id in keep:
            node = self.tree.nodes[node_id]
            if node.status is Status.BUGGY:
                if node.debug_count >= self.cfg.max_debug_steps:
                    self.tree.mark_dead(node_id)
                    retired = True
                    self.emit("expand", {"node_id": node_id, "action": "dead", "debug_count": node.debug_count})
                    continue
                if not self.ledger.charge(Charge.DEBUG_STEP):
                    break
                draft = genops.debug_solution(self.task, node, node.exec_report, self.llm,
                                              self.cfg.max_debug_steps, self.templates,
                                              self.cfg.exec_timeout_seconds)
                node.debug_count += 1
                # The repaired child takes over the branch.
                self.tree.remove_from_frontier(node_id)
                new_ids.append(self.add_node(draft, Origin.DEBUG, node))
            elif node.status is Status.EXECUTABLE and self.cfg.self_improve:
                if not self.ledger.charge(Charge.IMPROVE_STEP):
                    break
                memory = genops.build_memory(self.tree, self.cfg.memory_char_cap)
                draft = genops.improve_solution(self.task, node, memory, self.llm, self.templates)
                new_ids.append(self.add_node(draft, Origin.IMPROVE, node))
        return new_ids, retired

    def select_final(self) -> int:
        if not self.tree.executable_ids():
            return self.tree.ranked(self.tree.nodes)[0]
        return self.comparator.final(self.tree, self.ctx)

    def header(self) -> dict:
        templates_dir = None if self.deps.templates is None else str(self.templates.directory)
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task.to_dict(),
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "comparison_budget": self.cfg.budget,
            "budget_derived": self.cfg.budget_is_derived,
            "comparator": self.comparator.kind.value,
            "price_table": None if self.deps.price_table is None
            else {m: list(p) for m, p in self.deps.price_table.items()},
            "templates_dir": templates_dir,
            "redacted": False,
        }

    def run(self) -> SearchOutcome:
        self.emit("run_header", self.header())
        new_ids = self.initial_round()
        initial = True
        rounds = 0
        expanded: list[list[int]] = []
        while True:
            reason = stop_reason(self.ledger, self.cfg, self.tree.frontier)
            if reason is not None:
                break
            rounds += 1
            self.comparator.assess(self.tree, new_ids, self.ctx, initial)
            initial = False
            keep = self.comparator.keep(self.tree, self.cfg.k, self.ctx)
            drop = [i for i in self.tree.frontier if i not in keep]
            for node_id in drop:
                self.tree.remove_from_frontier(node_id)
            self.emit("prune", {
                "round": rounds,
                "keep": keep,
                "drop": drop,
                "ratings": {str(i): self.tree.nodes[i].rating for i in keep + drop},
            })
            expanded.append(list(keep))
            new_ids, retired = self.expansion_round(keep)
            if not new_ids and not retired and self.ledger.steps_left > 0:
                reason = StopReason.STALLED
                break
        final = self.select_final()
        node = self.tree.nodes[final]
        self.emit("final_selection", {
            "node_id": final,
            "status": node.status.value,
            "rating": node.rating,
            "score": node.score,
            "executable_ids": self.tree.executable_ids(),
        })
        self.emit("stop", {"reason": reason.value, "ledger": self.ledger.to_dict(), "rounds": rounds})
        return SearchOutcome(final, self.tree, self.ledger, reason, self.llm.calls, rounds, expanded)


def run_search(task: TaskSpec, cfg: SearchConfig, deps: SearchDeps) -> SearchOutcome:
    """Run one search to completion; transport and fixture errors propagate."""
    return _Search(task, cfg, deps).run()


def expansion_round(tree: SearchTree, keep: Sequence[int], cfg: SearchConfig, deps: SearchDeps,
                    ledger: BudgetLedger | None = None) -> list[int]:
    """Expand ``keep`` on an existing tree (stand-alone form of the loop's expansion step)."""
    search = _Search(tree.task, cfg, deps)
    search.tree = tree
    if ledger is not None:
        search.ledger = ledger
        search.llm.ledger = ledger
        search.ctx.ledger = ledger
    new_ids, _ = search.expansion_round(keep)
    return new_ids


def select_final(tree: SearchTree, comparator: Comparator, ledger: BudgetLedger, cfg: SearchConfig,
                 deps: SearchDeps) -> int:
    search = _Search(tree.task, cfg, SearchDeps(deps.provider, deps.executor, comparator, deps.rng,
                                                deps.templates, deps.price_table, deps.tracer))
    search.tree = tree
    search.ledger = ledger
    search.llm.ledger = ledger
    search.ctx.ledger = ledger
    return search.select_final()
