"""Generation operators: initial plans and programs, self-debug, self-improve, execution feedback.

Every operator renders one template, makes one provider call per attempt
(at most two attempts), and parses the reply.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from tkcts.core import SearchTree, SolutionNode, Status, TaskSpec
from tkcts.errors import PreconditionError, TransportError
from tkcts.execution import ExecutionReport, ExitKind, format_execution_output
from tkcts.prompts import TemplateSet, default_templates

MEMORY_CHAR_CAP = 8000
NOT_EXECUTED = "not yet executed"

_FENCE = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)
_CODE_TAGS = {"", "python", "py", "python3"}


@dataclass
class SolutionDraft:
    plan: str
    code: str
    buggy_at_birth: bool = False


@dataclass
class MemoryEntry:
    plan: str
    outcome_summary: str


@dataclass
class MemoryDigest:
    entries: list[MemoryEntry] = field(default_factory=list)
    rendered: str = "(none)"


@dataclass
class FeedbackSummary:
    is_buggy: bool
    findings: str


def _last_code_match(text: str) -> re.Match | None:
    last = None
    for m in _FENCE.finditer(text):
        if m.group(1).strip().lower() in _CODE_TAGS:
            last = m
    return last


def extract_code_block(text: str) -> str | None:
    """Contents of the last fenced python (or untagged) block, or None."""
    m = _last_code_match(text)
    return None if m is None else m.group(2).strip("\n")


def parse_solution(text: str) -> SolutionDraft | None:
    m = _last_code_match(text)
    if m is None:
        return None
    plan = _FENCE.sub("", text[: m.start()]).strip()
    return SolutionDraft(plan=plan or "(no plan given)", code=m.group(2).strip("\n"))


def render_memory(entries: list[MemoryEntry], cap: int = MEMORY_CHAR_CAP) -> str:
    if not entries:
        return "(none)"
    blocks = [
        f"Plan {i + 1}: {e.plan}\nOutcome: {e.outcome_summary}" for i, e in enumerate(entries)
    ]
    elided = 0
    while blocks:
        body = "\n\n".join(blocks)
        text = f"…[{elided} elided]\n\n{body}" if elided else body
        if len(text) <= cap:
            return text
        blocks.pop(0)
        elided += 1
    return f"…[{elided} elided]"


def build_memory(tree: SearchTree, cap: int = MEMORY_CHAR_CAP,
                 extra: list[SolutionDraft] | None = None) -> MemoryDigest:
    """One entry per node in id order (pruned nodes included), then any not-yet-inserted drafts."""
    entries = [
        MemoryEntry(node.plan, node.summary or NOT_EXECUTED)
        for _, node in sorted(tree.nodes.items())
    ]
    entries.extend(MemoryEntry(d.plan, NOT_EXECUTED) for d in extra or ())
    return MemoryDigest(entries=entries, rendered=render_memory(entries, cap))


def _generate(llm, role: str, prompt: str, purpose: str) -> SolutionDraft:
    text = ""
    for _ in range(2):
        text = llm.chat(role, prompt, purpose=purpose)
        draft = parse_solution(text)
        if draft is not None:
            return draft
    return SolutionDraft(plan=text.strip() or "(no plan given)", code="", buggy_at_birth=True)


def generate_initial_solutions(task: TaskSpec, n: int, llm, tree: SearchTree,
                               templates: TemplateSet | None = None,
                               memory_cap: int = MEMORY_CHAR_CAP) -> list[SolutionDraft]:
    if n < 1:
        raise ValueError("n must be >= 1")
    templates = templates or default_templates()
    drafts: list[SolutionDraft] = []
    for _ in range(n):
        memory = build_memory(tree, memory_cap, extra=drafts)
        prompt = templates.render(
            "initial",
            task_description=task.description,
            memory=memory.rendered,
            data_overview=task.data_overview or "(none)",
        )
        drafts.append(_generate(llm, "generator", prompt, "initial"))
    return drafts


def debug_solution(task: TaskSpec, node: SolutionNode, report: ExecutionReport | None, llm,
                   max_debug_steps: int = 3, templates: TemplateSet | None = None,
                   timeout_s: float | None = None) -> SolutionDraft:
    if node.status != Status.BUGGY:
        raise PreconditionError(f"node {node.node_id} is {node.status.value}, debug needs buggy")
    if node.debug_count >= max_debug_steps:
        raise PreconditionError(f"node {node.node_id} already used {node.debug_count} debug steps")
    templates = templates or default_templates()
    prompt = templates.render(
        "debug",
        task_description=task.description,
        program=_fenced(node.code),
        execution_output=format_execution_output(report, timeout_s),
        data_overview=task.data_overview or "(none)",
    )
    return _generate(llm, "debugger", prompt, "debug")


def improve_solution(task: TaskSpec, node: SolutionNode, memory: MemoryDigest, llm,
                     templates: TemplateSet | None = None) -> SolutionDraft:
    if node.status != Status.EXECUTABLE:
        raise PreconditionError(f"node {node.node_id} is {node.status.value}, improve needs executable")
    templates = templates or default_templates()
    prompt = templates.render(
        "improve",
        task_description=task.description,
        memory=memory.rendered,
        program=_fenced(node.code),
    )
    return _generate(llm, "generator", prompt, "improve")


def summarize_execution(task: TaskSpec, node: SolutionNode, report: ExecutionReport, llm,
                        templates: TemplateSet | None = None,
                        timeout_s: float | None = None) -> FeedbackSummary:
    templates = templates or default_templates()
    output = format_execution_output(report, timeout_s)
    is_buggy = report.exit_kind is not ExitKind.OK
    symptom = _symptom(report) if is_buggy else ""
    prompt = templates.render(
        "feedback", task_description=task.description, program=_fenced(node.code), execution_output=output,
    )
    try:
        text = llm.chat("summarizer", prompt, purpose="feedback").strip()
    except TransportError:
        text = output[-2000:]
    findings = f"{symptom}\n{text}".strip() if symptom else text
    return FeedbackSummary(is_buggy=is_buggy, findings=findings)


def _symptom(report: ExecutionReport) -> str:
    if report.exit_kind is ExitKind.TIMEOUT:
        limit = report.timeout_seconds
        return f"Execution hit the time limit ({limit:g} s) and was killed." if limit else \
            "Execution hit the time limit and was killed."
    if report.exit_kind is ExitKind.SPAWN_FAILURE:
        return f"The program could not be started: {report.stderr_tail.strip()[-300:]}"
    last = next((ln for ln in reversed(report.stderr_tail.splitlines()) if ln.strip()), "")
    return f"Execution failed with exit code {report.exit_code}: {last.strip()}"


def _fenced(code: str) -> str:
    return f"\n```python\n{code}\n```"
