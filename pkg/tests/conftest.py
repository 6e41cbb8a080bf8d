from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pytest

from tkcts.core import SearchConfig, TaskSpec
from tkcts.llm import ChatRequest, ChatResponse, Usage, approx_tokens

FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN_TASK = FIXTURES / "task" / "task.json"
GOLDEN_TRANSCRIPT = FIXTURES / "golden.json"
GOLDEN_CONFIG = FIXTURES / "golden_config.json"


@pytest.fixture
def task() -> TaskSpec:
    return TaskSpec(id="t", description="Compute the answer.")


@pytest.fixture
def cfg() -> SearchConfig:
    return SearchConfig()


class ChaosProvider:
    """Wraps a provider and sometimes replaces its reply with unusable text."""

    def __init__(self, inner, rng: np.random.Generator, p_garbage: float = 0.1):
        self.inner = inner
        self.rng = rng
        self.p_garbage = p_garbage

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.inner.complete(req)
        if self.rng.random() < self.p_garbage:
            return ChatResponse("I am not sure.", resp.usage, resp.model_echo)
        return resp


class RuleJudge:
    """Judge stub: prefers the response whose ``# q=N`` marker is larger; answers 'A' when shown first."""

    MARK = re.compile(r"# q=(\d+)")

    def __init__(self):
        self.calls = 0

    def complete(self, req: ChatRequest) -> ChatResponse:
        self.calls += 1
        qa, qb = (int(q) for q in self.MARK.findall(req.messages[-1])[-2:])
        better = "A" if qa > qb else "B" if qb > qa else "tie"
        text = f"Rating A: [[{min(10, max(1, qa))}]]\nRating B: [[{min(10, max(1, qb))}]]\nBetter: [[{better}]]"
        return ChatResponse(text, Usage(approx_tokens(req.messages[-1]), approx_tokens(text)), req.model)
