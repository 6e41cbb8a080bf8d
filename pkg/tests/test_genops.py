import pytest

from tkcts.core import BudgetLedger, Origin, SearchConfig, SearchTree, SolutionNode, Status
from tkcts.errors import PreconditionError, TransportError
from tkcts.execution import ExecutionReport, ExitKind
from tkcts.genops import (
    MemoryEntry,
    build_memory,
    debug_solution,
    extract_code_block,
    generate_initial_solutions,
    improve_solution,
    parse_solution,
    render_memory,
    summarize_execution,
)
from tkcts.llm import LLMClient, ScriptedProvider


def client(entries):
    cfg = SearchConfig()
    return LLMClient(ScriptedProvider(entries), cfg, BudgetLedger.for_config(cfg))


def test_extract_last_python_block():
    text = "Plan.\n```bash\nls\n```\n```python\nprint(1)\n```\nthen\n```py\nprint(2)\n```"
    assert extract_code_block(text) == "print(2)"
    assert extract_code_block("```\nx = 1\n```") == "x = 1"
    assert extract_code_block("no code") is None


def test_parse_solution_splits_plan_and_code():
    draft = parse_solution("Use a random forest.\n\n```python\nimport sklearn\n```\nDone.")
    assert draft.plan == "Use a random forest."
    assert draft.code == "import sklearn"
    assert parse_solution("just words") is None


def test_render_memory_drops_oldest_first():
    entries = [MemoryEntry(f"plan {i}", "ok " * 10) for i in range(5)]
    full = render_memory(entries, cap=10_000)
    assert full.startswith("Plan 1: plan 0")
    short = render_memory(entries, cap=120)
    assert len(short) <= 120
    assert short.startswith("…[") and "plan 4" in short and "plan 0" not in short
    assert render_memory([]) == "(none)"


def test_build_memory_includes_every_node_and_pending_drafts(task):
    tree = SearchTree(task)
    tree.insert(SolutionNode(plan="first", code="", summary="crashed"))
    second = tree.insert(SolutionNode(plan="second", code=""))
    tree.remove_from_frontier(second)
    memory = build_memory(tree)
    assert [e.plan for e in memory.entries] == ["first", "second"]
    assert "Outcome: crashed" in memory.rendered


def test_initial_generation_passes_memory_forward(task):
    entries = [{"role": "generator", "text": f"Plan {i}.\n```python\nprint({i})\n```"} for i in range(3)]
    llm = client(entries)
    drafts = generate_initial_solutions(task, 3, llm, SearchTree(task))
    assert [d.code for d in drafts] == ["print(0)", "print(1)", "print(2)"]
    assert llm.calls == 3


def test_generation_without_code_retries_then_marks_buggy(task):
    llm = client([{"role": "generator", "text": "I cannot."}, {"role": "generator", "text": "Still no."}])
    [draft] = generate_initial_solutions(task, 1, llm, SearchTree(task))
    assert draft.buggy_at_birth and draft.code == ""


def failing_report():
    return ExecutionReport(ExitKind.NONZERO, 1, "", "Traceback\nKeyError: 'y'", 1.0, timeout_seconds=900)


def test_debug_requires_buggy_node_under_cap(task):
    llm = client([{"role": "debugger", "text": "Fix.\n```python\nprint('fixed')\n```"}])
    ok = SolutionNode(plan="p", code="x", status=Status.EXECUTABLE, node_id=0)
    with pytest.raises(PreconditionError):
        debug_solution(task, ok, None, llm)
    capped = SolutionNode(plan="p", code="x", status=Status.BUGGY, debug_count=3, node_id=0)
    with pytest.raises(PreconditionError):
        debug_solution(task, capped, failing_report(), llm, max_debug_steps=3)
    buggy = SolutionNode(plan="p", code="x", status=Status.BUGGY, node_id=0)
    assert debug_solution(task, buggy, failing_report(), llm).code == "print('fixed')"


def test_improve_requires_executable(task):
    llm = client([{"role": "generator", "text": "Tune.\n```python\nprint('better')\n```"}])
    buggy = SolutionNode(plan="p", code="x", status=Status.BUGGY, node_id=0)
    with pytest.raises(PreconditionError):
        improve_solution(task, buggy, build_memory(SearchTree(task)), llm)
    ok = SolutionNode(plan="p", code="x", status=Status.EXECUTABLE, node_id=0, origin=Origin.INITIAL)
    assert improve_solution(task, ok, build_memory(SearchTree(task)), llm).code == "print('better')"


def test_summary_names_the_failure(task):
    llm = client([{"role": "summarizer", "text": "Column y is missing."}])
    node = SolutionNode(plan="p", code="x", node_id=0)
    fb = summarize_execution(task, node, failing_report(), llm)
    assert fb.is_buggy
    assert fb.findings.startswith("Execution failed with exit code 1: KeyError: 'y'")
    assert fb.findings.endswith("Column y is missing.")


def test_timeout_summary_mentions_limit(task):
    llm = client([{"role": "summarizer", "text": "Too slow."}])
    report = ExecutionReport(ExitKind.TIMEOUT, None, "", "", 900.0, timeout_seconds=900)
    fb = summarize_execution(task, SolutionNode(plan="p", code="x", node_id=0), report, llm)
    assert fb.is_buggy and "time limit" in fb.findings


def test_summary_falls_back_to_output_on_transport_error(task):
    class Down:
        def complete(self, req):
            raise TransportError("HTTP 503", status=503)

    cfg = SearchConfig()
    llm = LLMClient(Down(), cfg, BudgetLedger.for_config(cfg))
    ok = ExecutionReport(ExitKind.OK, 0, "accuracy 0.91\n", "", 2.0, timeout_seconds=900)
    fb = summarize_execution(task, SolutionNode(plan="p", code="x", node_id=0), ok, llm)
    assert not fb.is_buggy and "accuracy 0.91" in fb.findings
