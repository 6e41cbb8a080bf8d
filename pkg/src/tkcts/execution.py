"""Run candidate programs in a per-node workspace and classify the outcome."""

from __future__ import annotations

import enum
import os
import shlex
import shutil
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from tkcts.core import Status
from tkcts.llm import API_KEY_ENV

TAIL_BYTES = 16 * 1024
KILL_GRACE_SECONDS = 5.0
RUNFILE = "runfile.py"
OUTPUT_DIRS = ("working", "pred_results")

# Always removed from the child environment, in addition to API_KEY_ENV.
CREDENTIAL_ENV_VARS = (API_KEY_ENV, "OPENAI_API_KEY", "ANTHROPIC_API_KEY", "AZURE_OPENAI_API_KEY")


class ExitKind(str, enum.Enum):
    OK = "ok"
    NONZERO = "nonzero"
    TIMEOUT = "timeout"
    SPAWN_FAILURE = "spawn_failure"


@dataclass
class ExecutionReport:
    exit_kind: ExitKind
    exit_code: int | None = None
    stdout_tail: str = ""
    stderr_tail: str = ""
    elapsed_seconds: float = 0.0
    produced_artifacts: list[str] = field(default_factory=list)
    timeout_seconds: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "exit_kind": self.exit_kind.value,
            "exit_code": self.exit_code,
            "stdout_tail": self.stdout_tail,
            "stderr_tail": self.stderr_tail,
            "elapsed_seconds": self.elapsed_seconds,
            "produced_artifacts": list(self.produced_artifacts),
            "timeout_seconds": self.timeout_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExecutionReport:
        return cls(
            exit_kind=ExitKind(data["exit_kind"]),
            exit_code=data.get("exit_code"),
            stdout_tail=data.get("stdout_tail", ""),
            stderr_tail=data.get("stderr_tail", ""),
            elapsed_seconds=data.get("elapsed_seconds", 0.0),
            produced_artifacts=list(data.get("produced_artifacts", [])),
            timeout_seconds=data.get("timeout_seconds"),
        )

    @property
    def output_conventions(self) -> list[str]:
        """Which output directories (``working`` / ``pred_results``) the program wrote to."""
        return sorted({p.split("/", 1)[0] for p in self.produced_artifacts})


@dataclass
class Workspace:
    root: Path

    @property
    def input_dir(self) -> Path:
        return self.root / "input"

    @property
    def working_dir(self) -> Path:
        return self.root / "working"

    @property
    def results_dir(self) -> Path:
        return self.root / "pred_results"

    @classmethod
    def prepare(cls, root: str | Path, input_dir: str | Path | None) -> Workspace:
        """Create ``root`` with fresh output dirs and ``input`` linked to the task data."""
        ws = cls(Path(root))
        ws.root.mkdir(parents=True, exist_ok=True)
        for d in (ws.working_dir, ws.results_dir):
            if d.exists():
                shutil.rmtree(d)
            d.mkdir()
        if ws.input_dir.is_symlink() or ws.input_dir.is_file():
            ws.input_dir.unlink()
        elif ws.input_dir.exists():
            shutil.rmtree(ws.input_dir)
        if input_dir is not None and Path(input_dir).is_dir():
            ws.input_dir.symlink_to(Path(input_dir).resolve(), target_is_directory=True)
        else:
            ws.input_dir.mkdir()
        return ws

    def scan_artifacts(self) -> list[str]:
        found = []
        for name in OUTPUT_DIRS:
            base = self.root / name
            if base.is_dir():
                found.extend(p.relative_to(self.root).as_posix() for p in base.rglob("*") if p.is_file())
        return sorted(found)


def _tail(data: bytes) -> str:
    return data[-TAIL_BYTES:].decode("utf-8", errors="replace")


def child_env(extra_secrets: Sequence[str] = ()) -> dict[str, str]:
    env = dict(os.environ)
    for name in (*CREDENTIAL_ENV_VARS, *extra_secrets):
        env.pop(name, None)
    return env


def default_interpreter() -> list[str]:
    return [sys.executable, "{file}"]


def parse_exec_cmd(template: str | Sequence[str] | None) -> list[str]:
    if template is None:
        return default_interpreter()
    parts = shlex.split(template) if isinstance(template, str) else list(template)
    if not any("{file}" in p for p in parts):
        parts.append("{file}")
    return parts


def run_candidate(ws: Workspace, code: str, interpreter_cmd: str | Sequence[str] | None = None,
                  timeout_s: float = 900, extra_secrets: Sequence[str] = ()) -> ExecutionReport:
    if timeout_s <= 0:
        raise ValueError("timeout_s must be positive")
    runfile = ws.root / RUNFILE
    runfile.write_text(code)
    argv = [p.replace("{file}", str(runfile)) for p in parse_exec_cmd(interpreter_cmd)]
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=ws.root,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=child_env(extra_secrets),
            start_new_session=True,
        )
    except OSError as exc:
        return ExecutionReport(
            ExitKind.SPAWN_FAILURE, stderr_tail=f"failed to start {argv[0]!r}: {exc}",
            elapsed_seconds=time.monotonic() - start, timeout_seconds=timeout_s,
        )
    try:
        out, err = proc.communicate(timeout=timeout_s)
        kind = ExitKind.OK if proc.returncode == 0 else ExitKind.NONZERO
    except subprocess.TimeoutExpired:
        _kill_tree(proc)
        try:
            out, err = proc.communicate(timeout=KILL_GRACE_SECONDS)
        except subprocess.TimeoutExpired:
            out, err = b"", b""
        kind = ExitKind.TIMEOUT
    elapsed = time.monotonic() - start
    return ExecutionReport(
        exit_kind=kind,
        exit_code=proc.returncode if kind is not ExitKind.TIMEOUT else None,
        stdout_tail=_tail(out or b""),
        stderr_tail=_tail(err or b""),
        elapsed_seconds=elapsed,
        produced_artifacts=ws.scan_artifacts(),
        timeout_seconds=timeout_s,
    )


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def classify(report: ExecutionReport | None) -> Status:
    if report is not None and report.exit_kind is ExitKind.OK:
        return Status.EXECUTABLE
    return Status.BUGGY


def format_execution_output(report: ExecutionReport | None, timeout_s: float | None = None) -> str:
    """Render a report the way the prompts show execution output."""
    if report is None:
        return "(the response contained no program, so nothing was executed)"
    limit = timeout_s if timeout_s is not None else report.timeout_seconds
    parts = [s.rstrip("\n") for s in (report.stdout_tail, report.stderr_tail) if s.strip()]
    if report.exit_kind is ExitKind.TIMEOUT:
        parts.append("TimeoutError: execution exceeded the time limit and was killed.")
    elif report.exit_kind is ExitKind.SPAWN_FAILURE:
        parts.append("The interpreter could not be started.")
    if limit is not None:
        parts.append(
            f"Execution time: {round(report.elapsed_seconds)} seconds "
            f"(time limit is {_format_limit(limit)})."
        )
    return "\n".join(parts)


def _format_limit(seconds: float) -> str:
    if seconds >= 60 and seconds % 60 == 0:
        minutes = int(seconds // 60)
        return f"{minutes} minute" if minutes == 1 else f"{minutes} minutes"
    return f"{seconds:g} seconds"


class LocalExecutor:
    """Executes each node's code in ``base_dir/node_<id>`` with a shared read-only input link."""

    def __init__(self, base_dir: str | Path, input_dir: str | Path | None,
                 interpreter_cmd: str | Sequence[str] | None = None, timeout_s: float = 900):
        self.base_dir = Path(base_dir)
        self.input_dir = input_dir
        self.interpreter_cmd = interpreter_cmd
        self.timeout_s = timeout_s

    def run(self, node_id: int, code: str) -> ExecutionReport:
        ws = Workspace.prepare(self.base_dir / f"node_{node_id}", self.input_dir)
        return run_candidate(ws, code, self.interpreter_cmd, self.timeout_s)
