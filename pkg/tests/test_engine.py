import itertools
import json
import re

import numpy as np
import pytest

from tkcts.core import BudgetLedger, Origin, SearchConfig, SearchTree, SolutionNode, Status, TaskSpec
from tkcts.engine import (
    SearchDeps,
    StopReason,
    expansion_round,
    prune_round,
    run_search,
    select_final,
    should_stop,
)
from tkcts.execution import ExecutionReport, ExitKind, LocalExecutor
from tkcts.judge import JudgeContext, RelativeComparator
from tkcts.llm import ChatResponse, LLMClient, ScriptedProvider, Usage
from tkcts.prompts import default_templates
from tkcts.sim.synth import SynthParams, SyntheticExecutor, SyntheticProvider

from conftest import GOLDEN_CONFIG, GOLDEN_TASK, GOLDEN_TRANSCRIPT, ChaosProvider, RuleJudge

MARK = re.compile(r"# q=(\d+)")


def program(q, bug=False):
    return f"# q={q}\n{'raise RuntimeError' if bug else 'print'}('q{q}')\n"


class World:
    """Programs queued per purpose as (q, buggy); the judge prefers the larger q."""

    def __init__(self, initial=(), debug=(), improve=()):
        self.queues = {"initial": list(initial), "debug": list(debug), "improve": list(improve)}

    def complete(self, req):
        prompt = req.messages[-1]
        if req.purpose in self.queues:
            q, bug = self.queues[req.purpose].pop(0)
            text = f"Plan q{q}.\n```python\n{program(q, bug)}```"
        elif req.purpose == "feedback":
            text = "Noted."
        elif req.purpose == "judge_relative":
            qa, qb = (int(q) for q in MARK.findall(prompt)[-2:])
            better = "A" if qa > qb else "B" if qb > qa else "tie"
            text = f"Rating A: [[{max(1, min(qa, 10))}]]\nRating B: [[{max(1, min(qb, 10))}]]\nBetter: [[{better}]]"
        else:
            raise AssertionError(req.purpose)
        return ChatResponse(text, Usage(1, 1), req.model)


class MarkerExecutor:
    def run(self, node_id, code):
        if "raise" in code:
            return ExecutionReport(ExitKind.NONZERO, 1, "", "RuntimeError", 0.0, timeout_seconds=900)
        return ExecutionReport(ExitKind.OK, 0, "done", "", 0.0, timeout_seconds=900)


def search(world, **cfg):
    task = TaskSpec(id="t", description="d")
    return run_search(task, SearchConfig(**cfg), SearchDeps(world, MarkerExecutor()))


def test_golden_transcript_selects_node_1(tmp_path):
    task = TaskSpec.load(GOLDEN_TASK)
    cfg = SearchConfig(**json.loads(GOLDEN_CONFIG.read_text()))
    provider = ScriptedProvider.load(GOLDEN_TRANSCRIPT)
    outcome = run_search(task, cfg, SearchDeps(provider, LocalExecutor(tmp_path, task.input_dir)))
    assert outcome.final_node == 1
    assert outcome.final.status is Status.EXECUTABLE
    assert outcome.stop_reason is StopReason.STEPS_EXHAUSTED
    assert provider.index == len(provider.entries)


def test_all_buggy_run_falls_back_to_highest_rated():
    bugs = [(q, True) for q in range(1, 30)]
    outcome = search(World(initial=bugs[:2], debug=bugs[2:]), n_initial=2, total_steps=10)
    tree = outcome.tree
    assert tree.executable_ids() == []
    assert outcome.stop_reason is StopReason.FRONTIER_EMPTY
    assert outcome.final_node == tree.ranked(tree.nodes)[0]
    assert outcome.ledger.debug_steps_used == 6
    assert all(n.debug_count <= 3 for n in tree)


def test_degenerate_budget_returns_only_draft():
    outcome = search(World(initial=[(5, False)]), n_initial=1, total_steps=0)
    assert outcome.final_node == 0
    assert outcome.tree.nodes[0].exec_report is not None
    # The derived comparison budget is total_steps * k * 2 = 0, checked first.
    assert outcome.stop_reason is StopReason.BUDGET_EXHAUSTED
    assert outcome.ledger.comparisons_used == 0


@pytest.mark.parametrize("frontier,k,keep,drop", [
    ([3, 1, 4], 2, [3, 1], [4]),
    ([7], 2, [7], []),
    ([], 2, [], []),
])
def test_prune_round(frontier, k, keep, drop):
    assert prune_round(frontier, k) == (keep, drop)


def test_pruned_nodes_never_return():
    world = World(initial=[(9, False), (5, False), (7, False)], improve=[(1, False)] * 20)
    outcome = search(world, n_initial=3, total_steps=6, k=2)
    first_drop = set(outcome.expanded_per_round[0]) ^ {0, 1, 2}
    assert first_drop == {1}
    assert all(1 not in kept for kept in outcome.expanded_per_round)
    assert all(len(kept) <= 2 for kept in outcome.expanded_per_round)


def test_should_stop():
    cfg = SearchConfig()
    ledger = BudgetLedger.for_config(cfg)
    assert not should_stop(ledger, cfg, [0])
    assert should_stop(ledger, cfg, [])
    ledger.expansion_steps_used = 10
    assert should_stop(ledger, cfg, [0])


def small_tree(statuses, debug_counts=None):
    tree = SearchTree(TaskSpec(id="t", description="d"))
    for i, status in enumerate(statuses):
        tree.insert(SolutionNode(plan="p", code=program(i, status is Status.BUGGY), status=status,
                                 debug_count=(debug_counts or [0] * len(statuses))[i],
                                 exec_report=MarkerExecutor().run(i, program(i, status is Status.BUGGY))))
    return tree


def expand(tree, keep, world, steps=10, **cfg):
    cfg = SearchConfig(total_steps=steps, **cfg)
    ledger = BudgetLedger.for_config(cfg)
    return expansion_round(tree, keep, cfg, SearchDeps(world, MarkerExecutor()), ledger), ledger


def test_buggy_node_gets_debug_child():
    tree = small_tree([Status.BUGGY])
    [child], ledger = expand(tree, [0], World(debug=[(4, False)]))
    node = tree.nodes[child]
    assert node.origin is Origin.DEBUG and node.parent == 0 and node.depth == 1
    assert node.debug_count == 1 and tree.nodes[0].debug_count == 1
    assert ledger.debug_steps_used == 1


def test_one_step_left_goes_to_first_kept_node():
    tree = small_tree([Status.EXECUTABLE, Status.BUGGY])
    new, ledger = expand(tree, [0, 1], World(improve=[(8, False)], debug=[(2, False)]), steps=1)
    assert [tree.nodes[i].origin for i in new] == [Origin.IMPROVE]
    assert tree.nodes[new[0]].parent == 0
    assert ledger.expansion_steps_used == 1


def test_node_at_debug_cap_dies():
    tree = small_tree([Status.BUGGY], debug_counts=[3])
    new, ledger = expand(tree, [0], World())
    assert new == [] and tree.nodes[0].status is Status.DEAD
    assert 0 not in tree.frontier and ledger.expansion_steps_used == 0


def test_leader_child_losing_lets_runner_up_expand():
    # Round 1 keeps A (q=9) and B (q=5). A's child is poor, B's child better;
    # round 2 keeps A and B's child, so the B branch carries on.
    world = World(initial=[(9, False), (5, False), (1, False)],
                  improve=[(2, False), (6, False), (3, False), (7, False)])
    outcome = search(world, n_initial=3, total_steps=4, k=2)
    tree = outcome.tree
    assert outcome.expanded_per_round[0] == [0, 1]
    a_child, b_child = 3, 4
    assert tree.nodes[a_child].parent == 0 and tree.nodes[b_child].parent == 1
    assert outcome.expanded_per_round[1] == [0, b_child]
    assert tree.nodes[a_child].rating < tree.nodes[b_child].rating


def relative_final(tree, k=2, budget=100):
    cfg = SearchConfig(k=k, comparison_budget=budget)
    ledger = BudgetLedger.for_config(cfg)
    comp = RelativeComparator()
    return comp, JudgeContext(tree.task, cfg, LLMClient(RuleJudge(), cfg, ledger), ledger,
                              np.random.default_rng(0), default_templates())


def oracle_tree(qualities):
    tree = SearchTree(TaskSpec(id="t", description="d"))
    for q in qualities:
        tree.insert(SolutionNode(plan="p", code=program(q), status=Status.EXECUTABLE))
    return tree


def check_perfect_selection(qualities, prior, frontier=None):
    tree = oracle_tree(qualities)
    comp, ctx = relative_final(tree)
    for i, j in prior:
        comp._compare(tree, i, j, ctx)
    tree.reorder()
    if frontier is not None:
        tree.frontier = [i for i in tree.frontier if i in frontier]
    best = int(np.argmax(qualities))
    return comp.final(tree, ctx) == best


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_perfect_judge_selection_exhaustive(n):
    pairs = list(itertools.combinations(range(n), 2))
    for perm in itertools.permutations(range(1, n + 1)):
        for r in range(len(pairs) + 1):
            for prior in itertools.combinations(pairs, r):
                assert check_perfect_selection(list(perm), prior), (perm, prior)


def test_perfect_judge_selection_five_sampled():
    rng = np.random.default_rng(5)
    pairs = list(itertools.combinations(range(5), 2))
    for _ in range(1500):
        perm = list(rng.permutation(5) + 1)
        prior = [p for p in pairs if rng.random() < 0.5]
        rng.shuffle(prior)
        frontier = {int(i) for i in range(5) if rng.random() < 0.5}
        assert check_perfect_selection(perm, [tuple(p) for p in prior], frontier), (perm, prior, frontier)


def test_final_prefers_oracle_choice_among_executables():
    tree = SearchTree(TaskSpec(id="t", description="d"))
    for i in range(6):
        executable = i in (2, 5)
        tree.insert(SolutionNode(plan="p", code=program(10 if i == 5 else i, not executable),
                                 status=Status.EXECUTABLE if executable else Status.BUGGY))
    comp, ctx = relative_final(tree)
    cfg = ctx.cfg
    deps = SearchDeps(RuleJudge(), MarkerExecutor())
    assert select_final(tree, comp, ctx.ledger, cfg, deps) == 5


def test_final_single_executable_and_none():
    tree = small_tree([Status.BUGGY, Status.EXECUTABLE, Status.BUGGY, Status.BUGGY])
    comp, ctx = relative_final(tree)
    assert select_final(tree, comp, ctx.ledger, ctx.cfg, SearchDeps(RuleJudge(), MarkerExecutor())) == 1
    tree = small_tree([Status.BUGGY, Status.BUGGY])
    tree.nodes[1].rating = 1600
    tree.reorder()
    assert select_final(tree, comp, ctx.ledger, ctx.cfg, SearchDeps(RuleJudge(), MarkerExecutor())) == 1


def test_no_self_improve_stalls_on_executables():
    world = World(initial=[(3, False), (4, False)])
    outcome = search(world, n_initial=2, total_steps=5, self_improve=False)
    assert outcome.stop_reason is StopReason.STALLED
    assert outcome.final_node == 1


def synth_run(seed, chaos=0.0, **cfg):
    rng = np.random.default_rng(seed)
    provider = SyntheticProvider(SynthParams(), rng)
    if chaos:
        provider = ChaosProvider(provider, rng, chaos)
    return run_search(TaskSpec(id="s", description="d"), SearchConfig(seed=seed, **cfg),
                      SearchDeps(provider, SyntheticExecutor()))


def test_budget_safety_small_fuzz():
    rng = np.random.default_rng(11)
    for seed in range(150):
        cfg = dict(n_initial=int(rng.integers(1, 6)), total_steps=int(rng.integers(0, 12)),
                   k=int(rng.integers(1, 5)), max_debug_steps=int(rng.integers(0, 4)))
        if rng.random() < 0.5:
            cfg["comparison_budget"] = int(rng.integers(0, 15))
        outcome = synth_run(seed, chaos=0.2, **cfg)
        c = SearchConfig(**cfg)
        assert outcome.ledger.comparisons_used <= c.budget
        assert outcome.ledger.expansion_steps_used <= c.total_steps
        final = outcome.final
        assert final.status is Status.EXECUTABLE or not outcome.tree.executable_ids()


def test_runs_are_deterministic_given_seed():
    a, b = synth_run(3), synth_run(3)
    assert a.final_node == b.final_node
    assert [(n.code, n.rating, n.status) for n in a.tree] == [(n.code, n.rating, n.status) for n in b.tree]
