"""Synthetic tasks with hidden solution quality, for running the real search offline.

The synthetic provider answers every prompt the search sends (generation,
debugging, improvement, feedback, judging) and the synthetic executor
"runs" the programs it wrote. Each program carries its hidden state in a
comment line (``# latent q=... bug=...``); the judge stubs read those lines
out of the prompts they receive, so the search code path is exactly the one
used with a real model.
"""

from __future__ import annotations

import enum
import re
from dataclasses import asdict, dataclass, fields, replace
from typing import Any

import numpy as np

from tkcts.core import ConfigError, SearchConfig, Status, TaskSpec
from tkcts.engine import SearchDeps, SearchOutcome, run_search
from tkcts.execution import ExecutionReport, ExitKind
from tkcts.judge import PairVerdict, render_pair_verdict
from tkcts.llm import ChatRequest, ChatResponse, Usage, approx_tokens

_LATENT = re.compile(r"# latent q=([0-9.eE+-]+) bug=([01])")


@dataclass
class SynthParams:
    initial_quality_low: float = 0.0
    initial_quality_high: float = 1.0
    debug_success_prob: float = 0.6
    improve_mean: float = 0.05
    improve_sd: float = 0.05
    success_threshold: float = 0.8
    bug_prob: float = 0.5
    # Chance that an improvement breaks a working program.
    improve_bug_prob: float = 0.3
    pairwise_accuracy: float = 0.85
    absolute_noise_sd: float = 0.25
    rubric_noise_sd: float = 0.15
    # How much lower a failing program looks to the judge stubs.
    buggy_penalty: float = 1.0

    def __post_init__(self):
        for name in ("debug_success_prob", "bug_prob", "improve_bug_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"synth.{name}", f"probability outside [0, 1]: {value}")
        if not 0.5 <= self.pairwise_accuracy <= 1.0:
            raise ConfigError("synth.pairwise_accuracy", "must lie in [0.5, 1]")
        if not 0.0 <= self.initial_quality_low <= self.initial_quality_high <= 1.0:
            raise ConfigError("synth.initial_quality_low", "need 0 <= low <= high <= 1")
        if self.improve_sd < 0 or self.absolute_noise_sd < 0 or self.rubric_noise_sd < 0:
            raise ConfigError("synth", "noise scales must be non-negative")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SynthParams:
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"synth.{key}", "unknown field")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Latent:
    quality: float
    buggy: bool


def encode_latent(latent: Latent) -> str:
    return f"# latent q={latent.quality!r} bug={int(latent.buggy)}"


def decode_latents(text: str) -> list[Latent]:
    return [Latent(float(q), b == "1") for q, b in _LATENT.findall(text)]


def latent_of(code: str) -> Latent | None:
    found = decode_latents(code)
    return found[-1] if found else None


def perceived_quality(latent: Latent, params: SynthParams) -> float:
    return latent.quality - (params.buggy_penalty if latent.buggy else 0.0)


def _rating_1_10(q: float) -> int:
    return int(min(10, max(1, round(1 + 9 * q))))


def oracle_judge(a_quality: float, b_quality: float, accuracy: float, rng: np.random.Generator,
                 presented_order: tuple[int, int] = (0, 1)) -> PairVerdict:
    """Noisy comparison: favors the better side with probability ``accuracy``."""
    if not 0.5 <= accuracy <= 1.0:
        raise ValueError("accuracy must lie in [0.5, 1]")
    ra, rb = _rating_1_10(a_quality), _rating_1_10(b_quality)
    if a_quality == b_quality:
        return PairVerdict(ra, rb, "tie", "equal quality", presented_order)
    better = "A" if a_quality > b_quality else "B"
    correct = accuracy >= 1.0 or rng.random() < accuracy
    winner = better if correct else ("B" if better == "A" else "A")
    if (winner == "A") != (ra >= rb):
        ra, rb = rb, ra
    return PairVerdict(ra, rb, winner, "oracle", presented_order)


class SyntheticProvider:
    """Chat provider for the synthetic world; dispatches on ``ChatRequest.purpose``."""

    def __init__(self, params: SynthParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.generated = 0

    def _program(self, latent: Latent, note: str) -> str:
        self.generated += 1
        plan = f"Approach {self.generated}: {note}"
        body = "import sys\nprint('metric computed')\n"
        if latent.buggy:
            body += "raise RuntimeError('synthetic failure')\n"
        return f"{plan}\n```python\n{encode_latent(latent)}\n{body}```"

    def _initial(self) -> str:
        p = self.params
        q = float(self.rng.uniform(p.initial_quality_low, p.initial_quality_high))
        return self._program(Latent(q, bool(self.rng.random() < p.bug_prob)), "fresh design.")

    def _no_code(self) -> Latent:
        # A reply without a code block has no latent line; it behaves as a failing program.
        return Latent(0.0, True)

    def _section(self, prompt: str, side: str) -> Latent:
        start, end = f"[The start of Assistant {side}'s RESPONSE]", f"[The end of Assistant {side}'s RESPONSE]"
        body = prompt.partition(start)[2].partition(end)[0]
        return latent_of(body) or self._no_code()

    def _debug(self, prompt: str) -> str:
        found = decode_latents(prompt)
        if found:
            parent = found[-1]
        else:
            p = self.params
            parent = Latent(float(self.rng.uniform(p.initial_quality_low, p.initial_quality_high)), True)
        fixed = bool(self.rng.random() < self.params.debug_success_prob)
        return self._program(Latent(parent.quality, parent.buggy and not fixed), "bug fix.")

    def _improve(self, prompt: str) -> str:
        p = self.params
        parent = decode_latents(prompt)[-1]
        delta = float(np.clip(self.rng.normal(p.improve_mean, p.improve_sd), -1.0, 1.0))
        quality = float(np.clip(parent.quality + delta, 0.0, 1.0))
        return self._program(Latent(quality, bool(self.rng.random() < p.improve_bug_prob)), "refinement.")

    def _judge_relative(self, prompt: str) -> str:
        if "[The start of Assistant B's RESPONSE]" in prompt:
            a, b = self._section(prompt, "A"), self._section(prompt, "B")
        else:
            a, b = decode_latents(prompt)[-2:]
        verdict = oracle_judge(perceived_quality(a, self.params), perceived_quality(b, self.params),
                               self.params.pairwise_accuracy, self.rng)
        return render_pair_verdict(verdict.rating_a, verdict.rating_b, verdict.winner, "synthetic judgment")

    def _judge_absolute(self, prompt: str, noise_sd: float) -> str:
        latent = latent_of(prompt) or self._no_code()
        noisy = perceived_quality(latent, self.params) + float(self.rng.normal(0.0, noise_sd))
        score = int(min(100, max(0, round(100 * noisy))))
        return f"Synthetic assessment.\n**Score: {score}**"

    def complete(self, req: ChatRequest) -> ChatResponse:
        prompt = req.messages[-1]
        purpose = req.purpose
        if purpose == "initial":
            text = self._initial()
        elif purpose == "debug":
            text = self._debug(prompt)
        elif purpose == "improve":
            text = self._improve(prompt)
        elif purpose == "feedback":
            text = "The run finished; see execution output."
        elif purpose == "judge_relative":
            text = self._judge_relative(prompt)
        elif purpose == "judge_absolute":
            text = self._judge_absolute(prompt, self.params.absolute_noise_sd)
        elif purpose == "judge_rubric":
            text = self._judge_absolute(prompt, self.params.rubric_noise_sd)
        else:
            raise ValueError(f"synthetic provider cannot answer purpose {purpose!r}")
        return ChatResponse(text, Usage(approx_tokens(prompt), approx_tokens(text)), req.model)


class SyntheticExecutor:
    def run(self, node_id: int, code: str) -> ExecutionReport:
        latent = latent_of(code)
        if latent is None or latent.buggy:
            return ExecutionReport(
                ExitKind.NONZERO, exit_code=1, stdout_tail="metric computed\n",
                stderr_tail="Traceback (most recent call last):\n  File \"runfile.py\", line 4, in <module>\n"
                            "RuntimeError: synthetic failure\n",
                timeout_seconds=900,
            )
        return ExecutionReport(ExitKind.OK, exit_code=0, stdout_tail="metric computed\n", timeout_seconds=900)


class ErrorClass(str, enum.Enum):
    NONE = "none"
    EXPLORATION_NOT_EXECUTABLE = "exploration_not_executable"
    EXPLORATION_UNSUCCESSFUL = "exploration_unsuccessful"
    VERIFICATION = "verification"


@dataclass
class RunMetrics:
    success: bool
    ver: bool
    final_quality: float
    regret: float
    error_class: ErrorClass
    comparisons: int
    llm_calls: int
    nodes: int
    stop_reason: str

    def to_row(self) -> dict[str, Any]:
        row = asdict(self)
        row["error_class"] = self.error_class.value
        return row


def metrics_for(outcome: SearchOutcome, params: SynthParams) -> RunMetrics:
    def succeeded(node) -> bool:
        latent = latent_of(node.code)
        return node.status is Status.EXECUTABLE and latent is not None \
            and latent.quality >= params.success_threshold

    qualities = {nid: (latent_of(n.code) or Latent(0.0, True)).quality for nid, n in outcome.tree.nodes.items()}
    final = outcome.final
    ver = final is not None and final.status is Status.EXECUTABLE
    success = final is not None and succeeded(final)
    final_quality = qualities[outcome.final_node] if final is not None else 0.0
    if success:
        error = ErrorClass.NONE
    elif any(succeeded(n) for n in outcome.tree):
        error = ErrorClass.VERIFICATION
    elif not outcome.tree.executable_ids():
        error = ErrorClass.EXPLORATION_NOT_EXECUTABLE
    else:
        error = ErrorClass.EXPLORATION_UNSUCCESSFUL
    return RunMetrics(
        success=success,
        ver=ver,
        final_quality=final_quality,
        regret=max(qualities.values()) - final_quality,
        error_class=error,
        comparisons=outcome.ledger.comparisons_used,
        llm_calls=outcome.llm_calls,
        nodes=len(outcome.tree),
        stop_reason=outcome.stop_reason.value,
    )


SYNTH_TASK = TaskSpec(id="synthetic", description="Synthetic task with hidden solution quality.")


def run_trial(cfg: SearchConfig, params: SynthParams, seed: np.random.SeedSequence | int,
              tracer=None) -> tuple[RunMetrics, SearchOutcome]:
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    engine_seq, world_seq = seq.spawn(2)
    # The engine seeds its own stream from cfg.seed, which keeps trial traces replayable.
    cfg = replace(cfg, seed=int(engine_seq.generate_state(1, np.uint64)[0]))
    deps = SearchDeps(
        provider=SyntheticProvider(params, np.random.default_rng(world_seq)),
        executor=SyntheticExecutor(),
        tracer=tracer,
    )
    outcome = run_search(SYNTH_TASK, cfg, deps)
    return metrics_for(outcome, params), outcome


def run_trials(cfg: SearchConfig, params: SynthParams, trials: int, seed: int = 0) -> list[RunMetrics]:
    """Independent trials with per-trial seed streams spawned from ``seed``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    children = np.random.SeedSequence(seed).spawn(trials)
    return [run_trial(cfg, params, child)[0] for child in children]
