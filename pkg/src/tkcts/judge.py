"""Frontier comparators: pairwise relative judgments, absolute scoring, random choice.

Pairwise verdicts feed Elo ratings; absolute scores order the frontier
directly; the random comparator ignores quality altogether. Each strategy
exposes the same three hooks to the search loop: ``assess`` (judge the
current frontier), ``keep`` (choose the top-k to retain), ``final`` (pick
the answer).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from tkcts import elo
from tkcts.core import BudgetLedger, Charge, ComparatorKind, SearchConfig, SearchTree, SolutionNode, TaskSpec
from tkcts.errors import ConfigError, ParseError
from tkcts.prompts import TemplateSet, default_templates

PARSE_FAILURE = "parse-failure"

_RATING = {
    "rating_a": re.compile(r"Rating A:\s*\[\[\s*(-?\d+)\s*\]\]"),
    "rating_b": re.compile(r"Rating B:\s*\[\[\s*(-?\d+)\s*\]\]"),
}
_BETTER = re.compile(r"Better:\s*\[\[\s*([^\[\]]*?)\s*\]\]")
_SCORE = re.compile(r"\*\*Score:\s*(?:\*\*)?\s*(-?\d+)")
_EXPLANATION = re.compile(r"Explanation:\s*(.*?)(?=Rating A:|\Z)", re.DOTALL)


@dataclass
class PairVerdict:
    rating_a: int | None
    rating_b: int | None
    winner: str  # "A", "B" or "tie", in presentation terms
    rationale: str
    presented_order: tuple[int, int]

    @property
    def winner_id(self) -> int | None:
        if self.winner == "A":
            return self.presented_order[0]
        if self.winner == "B":
            return self.presented_order[1]
        return None

    def outcome_for(self, i: int, j: int) -> str:
        """Elo outcome ("i", "j" or "tie") for the ordered pair (i, j)."""
        wid = self.winner_id
        if wid is None:
            return "tie"
        if wid == i:
            return "i"
        if wid == j:
            return "j"
        raise ValueError(f"verdict between {self.presented_order} does not cover pair ({i}, {j})")

    def to_dict(self) -> dict:
        return {
            "rating_a": self.rating_a,
            "rating_b": self.rating_b,
            "winner": self.winner,
            "winner_id": self.winner_id,
            "rationale": self.rationale,
            "presented_order": list(self.presented_order),
        }


@dataclass
class AbsoluteScore:
    node_id: int
    score: int

    def __post_init__(self):
        if not 0 <= self.score <= 100:
            raise ValueError(f"score {self.score} outside 0..100")


def parse_pair_verdict(text: str) -> tuple[int, int, str]:
    """Extract ``(rating_a, rating_b, winner)`` from the last occurrence of each field.

    Winner is ``"A"``, ``"B"`` or ``"tie"`` (an explicit tie/equal token).
    """
    ratings = []
    for name, pattern in _RATING.items():
        found = pattern.findall(text)
        if not found:
            raise ParseError(name, "missing")
        value = int(found[-1])
        if not 1 <= value <= 10:
            raise ParseError(name, f"out of range: {value}")
        ratings.append(value)
    found = _BETTER.findall(text)
    if not found:
        raise ParseError("better", "missing")
    token = found[-1].strip().strip("*").strip().upper()
    if token in ("A", "B"):
        winner = token
    elif token in ("TIE", "EQUAL", "A=B"):
        winner = "tie"
    else:
        raise ParseError("better", f"ambiguous value {found[-1]!r}")
    return ratings[0], ratings[1], winner


def render_pair_verdict(rating_a: int, rating_b: int, winner: str, explanation: str = "") -> str:
    better = "tie" if winner == "tie" else winner
    return (
        "***\n"
        f"Explanation: {explanation or 'Both responses were compared.'}\n"
        f"Rating A: [[{rating_a}]]\n"
        f"Rating B: [[{rating_b}]]\n"
        f"Better: [[{better}]]\n"
        "***"
    )


def parse_score(text: str) -> int:
    found = _SCORE.findall(text)
    if not found:
        raise ParseError("score", "missing **Score: N**")
    value = int(found[-1])
    if not 0 <= value <= 100:
        raise ParseError("score", f"out of range: {value}")
    return value


def _rationale(text: str) -> str:
    m = _EXPLANATION.findall(text)
    body = m[-1] if m else text
    return body.strip().strip("*").strip()[:2000]


def select_pairs(frontier: Sequence[int], new_ids: Iterable[int], k: int, remaining_budget: int,
                 initial: bool = False, compared: set[frozenset] | None = None) -> list[tuple[int, int]]:
    """Pairs to judge this round.

    Initial round: round-robin over the frontier. Later rounds: each new id
    (ascending) against each top-k incumbent (frontier order) it has not met.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    compared = compared or set()
    new = set(new_ids)
    if initial:
        candidates = list(combinations(frontier, 2))
    else:
        incumbents = [i for i in frontier if i not in new][:k]
        candidates = [(n, inc) for n in sorted(new) if n in frontier for inc in incumbents]
    pairs: list[tuple[int, int]] = []
    seen: set[frozenset] = set()
    for a, b in candidates:
        key = frozenset((a, b))
        if a == b or key in seen or key in compared:
            continue
        seen.add(key)
        pairs.append((a, b))
    return pairs[: max(remaining_budget, 0)]


def render_response(node: SolutionNode) -> str:
    summary = node.summary or "not yet executed"
    return f"\n{node.plan}\n```python\n{node.code}\n```\nResponse summary: {summary}\n"


def _judge_once(task: TaskSpec, shown_a: SolutionNode, shown_b: SolutionNode, llm,
                templates: TemplateSet) -> PairVerdict:
    prompt = templates.render(
        "judge_relative",
        task_description=task.description,
        response_a=render_response(shown_a),
        response_b=render_response(shown_b),
    )
    order = (shown_a.node_id, shown_b.node_id)
    text = ""
    for _ in range(2):
        text = llm.chat("judge", prompt, purpose="judge_relative")
        try:
            ra, rb, winner = parse_pair_verdict(text)
        except ParseError:
            continue
        return PairVerdict(ra, rb, winner, _rationale(text), order)
    return PairVerdict(None, None, "tie", PARSE_FAILURE, order)


def compare_relative(task: TaskSpec, a: SolutionNode, b: SolutionNode, llm, rng: np.random.Generator,
                     templates: TemplateSet | None = None, double_swap: bool = False) -> PairVerdict:
    """Judge ``a`` against ``b``, showing them in a seeded random A/B order."""
    templates = templates or default_templates()
    first, second = (a, b) if rng.random() < 0.5 else (b, a)
    verdict = _judge_once(task, first, second, llm, templates)
    if not double_swap:
        return verdict
    swapped = _judge_once(task, second, first, llm, templates)
    if verdict.winner_id != swapped.winner_id:
        return PairVerdict(verdict.rating_a, verdict.rating_b, "tie",
                           "order-dependent verdicts; treated as tie", verdict.presented_order)
    return verdict


def score_absolute(task: TaskSpec, node: SolutionNode, llm, rubric: dict | list | None = None,
                   templates: TemplateSet | None = None) -> AbsoluteScore:
    templates = templates or default_templates()
    common = dict(
        task_description=task.description,
        response_summary=node.summary or "not yet executed",
        program=f"\n```python\n{node.code}\n```",
    )
    if rubric is not None:
        prompt = templates.render("judge_rubric", rubric_json=json.dumps(rubric, indent=1), **common)
        purpose = "judge_rubric"
    else:
        prompt = templates.render("judge_absolute", **common)
        purpose = "judge_absolute"
    error: ParseError | None = None
    for _ in range(2):
        text = llm.chat("judge", prompt, purpose=purpose)
        try:
            return AbsoluteScore(node.node_id, parse_score(text))
        except ParseError as exc:
            error = exc
    assert error is not None
    raise error


def pick_random(pool: Iterable[int], rng: np.random.Generator) -> int:
    pool = sorted(pool)
    if not pool:
        raise ValueError("cannot pick from an empty pool")
    return pool[int(rng.integers(len(pool)))]


@dataclass
class JudgeContext:
    task: TaskSpec
    cfg: SearchConfig
    llm: object
    ledger: BudgetLedger
    rng: np.random.Generator
    templates: TemplateSet
    tracer: object = None

    def emit(self, kind: str, payload: dict) -> int | None:
        if self.tracer is None:
            return None
        return self.tracer.emit(kind, payload)


def final_candidates(tree: SearchTree) -> list[int]:
    """Executable nodes anywhere in the tree; every node when none is executable."""
    return tree.executable_ids() or list(tree.nodes)


def final_pool(tree: SearchTree, size: int, contenders: set[int] | frozenset = frozenset()) -> list[int]:
    """Final candidates: every id in ``contenders``, then others up to ``size``.

    Others are taken live frontier nodes first, then by rank, because
    children from the last expansion round have not been judged yet and a
    rating-only cut would leave them out at their initial rating.
    """
    candidates = tree.ranked(final_candidates(tree))
    live = set(tree.frontier)
    ordered = [i for i in candidates if i in live] + [i for i in candidates if i not in live]
    must = [i for i in ordered if i in contenders]
    rest = [i for i in ordered if i not in contenders]
    return must + rest[: max(0, size - len(must))]


class Comparator:
    kind: ComparatorKind
    rank_by = "rating"

    def assess(self, tree: SearchTree, new_ids: Sequence[int], ctx: JudgeContext, initial: bool) -> None:
        """Judge the frontier; default is a no-op."""

    def keep(self, tree: SearchTree, k: int, ctx: JudgeContext) -> list[int]:
        return list(tree.frontier[:k])

    def final(self, tree: SearchTree, ctx: JudgeContext) -> int:
        raise NotImplementedError


class RelativeComparator(Comparator):
    kind = ComparatorKind.RELATIVE

    def __init__(self):
        self.compared: set[frozenset] = set()
        # Latest verdict per unordered pair: winner id, or None for a tie.
        self.results: dict[frozenset, int | None] = {}

    def _compare(self, tree: SearchTree, i: int, j: int, ctx: JudgeContext) -> bool:
        if not ctx.ledger.charge(Charge.COMPARISON):
            return False
        a, b = tree.nodes[i], tree.nodes[j]
        verdict = compare_relative(ctx.task, a, b, ctx.llm, ctx.rng, ctx.templates, ctx.cfg.double_swap)
        seq = ctx.emit("verdict", {"mode": "relative", "pair": [i, j], **verdict.to_dict()})
        before = (a.rating, b.rating)
        after = elo.update_pair(before, verdict.outcome_for(i, j), ctx.cfg.elo_k_factor)
        a.rating, b.rating = after
        ctx.emit("rating_update", {"verdict_seq": seq, "ids": [i, j], "before": list(before), "after": list(after)})
        key = frozenset((i, j))
        self.compared.add(key)
        self.results[key] = verdict.winner_id
        return True

    def unbeaten(self, tree: SearchTree) -> set[int]:
        """Nodes that never lost a comparison.

        Elo history can push such a node below the cut, yet under a
        transitive judge the best candidate is always one of them.
        """
        losers = set()
        for key, winner in self.results.items():
            if winner is not None:
                losers.update(key - {winner})
        return set(tree.nodes) - losers

    def assess(self, tree, new_ids, ctx, initial):
        pairs = select_pairs(tree.frontier, new_ids, ctx.cfg.k, ctx.ledger.comparisons_left,
                             initial=initial, compared=self.compared)
        for i, j in pairs:
            if not self._compare(tree, i, j, ctx):
                break
        tree.reorder()

    def final(self, tree, ctx):
        pool = final_pool(tree, 2 * ctx.cfg.k, self.unbeaten(tree))
        for i, j in combinations(pool, 2):
            if frozenset((i, j)) in self.compared:
                continue
            if not self._compare(tree, i, j, ctx):
                break
        tree.reorder()
        wins = {i: 0.0 for i in pool}
        for i, j in combinations(pool, 2):
            key = frozenset((i, j))
            if key not in self.results:
                continue
            w = self.results[key]
            if w is None:
                wins[i] += 0.5
                wins[j] += 0.5
            else:
                wins[w] += 1.0
        return min(pool, key=lambda n: (-wins[n], tree.order_key(n)))


class AbsoluteComparator(Comparator):
    rank_by = "score"

    def __init__(self, kind: ComparatorKind | str, rubric: dict | list | None = None):
        kind = ComparatorKind.parse(kind)
        if kind is ComparatorKind.RUBRIC_ABSOLUTE and rubric is None:
            raise ConfigError("task.rubric", "the rubric-absolute comparator needs a task rubric")
        self.kind = kind
        self.rubric = rubric if kind is ComparatorKind.RUBRIC_ABSOLUTE else None
        self.attempted: set[int] = set()

    def assess(self, tree, new_ids, ctx, initial):
        self._score_all(tree, list(tree.frontier), ctx)

    def _score_all(self, tree: SearchTree, ids: Sequence[int], ctx: JudgeContext) -> None:
        for node_id in ids:
            if node_id in self.attempted:
                continue
            if not ctx.ledger.charge(Charge.COMPARISON):
                break
            self.attempted.add(node_id)
            node = tree.nodes[node_id]
            try:
                node.score = score_absolute(ctx.task, node, ctx.llm, self.rubric, ctx.templates).score
                error = None
            except ParseError as exc:
                node.score = None
                error = str(exc)
            seq = ctx.emit("verdict", {"mode": self.kind.value, "node": node_id, "score": node.score,
                                       "error": error})
            ctx.emit("rating_update", {"verdict_seq": seq, "ids": [node_id], "score": node.score})
        tree.reorder()

    def final(self, tree, ctx):
        # Last-round children are still unscored; score them while budget remains.
        self._score_all(tree, final_candidates(tree), ctx)
        return tree.ranked(final_candidates(tree))[0]


class RandomComparator(Comparator):
    kind = ComparatorKind.RANDOM

    def keep(self, tree, k, ctx):
        pool = list(tree.frontier)
        kept = []
        while pool and len(kept) < k:
            choice = pick_random(pool, ctx.rng)
            pool.remove(choice)
            kept.append(choice)
        return kept

    def final(self, tree, ctx):
        # Draw from what remains on the frontier, as the other comparators favor it too.
        candidates = final_candidates(tree)
        live = [i for i in candidates if i in set(tree.frontier)]
        return pick_random(live or candidates, ctx.rng)


def make_comparator(kind: ComparatorKind | str, rubric: dict | list | None = None) -> Comparator:
    kind = ComparatorKind.parse(kind)
    if kind is ComparatorKind.RELATIVE:
        return RelativeComparator()
    if kind is ComparatorKind.RANDOM:
        return RandomComparator()
    return AbsoluteComparator(kind, rubric)
