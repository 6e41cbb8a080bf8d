"""Command-line entry point: ``tkcts {run,simulate,sweep-k,replay,report}``.

Exit codes: 0 on success, 2 for invalid configuration (with the offending
field path), 1 for runtime failures. Settings resolve as command-line flag,
then config file, then built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from tkcts.core import ComparatorKind, ConfigError, SearchConfig, Status, TaskSpec
from tkcts.errors import TkctsError

logger = logging.getLogger("tkcts")

# flag dest -> SearchConfig field
SEARCH_FLAGS = {
    "seed": "seed",
    "comparator": "comparator_kind",
    "k": "k",
    "n_initial": "n_initial",
    "max_debug": "max_debug_steps",
    "total_steps": "total_steps",
    "comparison_budget": "comparison_budget",
    "timeout_seconds": "exec_timeout_seconds",
    "double_swap": "double_swap",
    "self_improve": "self_improve",
}
# flag dest -> run-level config key; path-valued ones resolve against the config file
RUN_FLAGS = ("task", "transcript", "exec_cmd", "templates_dir", "out_dir", "redact", "price_table")
PATH_KEYS = ("task", "transcript", "templates_dir", "out_dir", "price_table")


def _read_json(path: str | Path, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(what, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(what, f"invalid JSON in {path}: {exc}") from None


def load_config_file(path: str | None) -> dict[str, Any]:
    """Config file contents with relative paths resolved against the file's directory."""
    if path is None:
        return {}
    data = _read_json(path, "--config")
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    base = Path(path).resolve().parent
    for key in PATH_KEYS:
        if isinstance(data.get(key), str):
            data[key] = str((base / data[key]).resolve())
    return data


def resolve_settings(args: argparse.Namespace) -> tuple[SearchConfig, dict[str, Any]]:
    """Merge flag > config file > default into a SearchConfig and run-level options."""
    data = load_config_file(getattr(args, "config", None))
    run_opts = {key: data.pop(key, None) for key in RUN_FLAGS}
    search = dict(data.pop("search", {}) or {})
    # Search fields may sit at the top level of the file too.
    search.update(data)
    for dest, name in SEARCH_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            search[name] = value
    for key in RUN_FLAGS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            run_opts[key] = value
    cfg = SearchConfig.from_dict(search)
    return cfg, run_opts


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; command-line flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--comparator", choices=[k.value.replace("_", "-") for k in ComparatorKind])
    p.add_argument("--k", type=int, help="frontier nodes kept per round")
    p.add_argument("--n-initial", type=int)
    p.add_argument("--max-debug", type=int)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--comparison-budget", type=int)
    p.add_argument("--timeout-seconds", type=int)
    p.add_argument("--double-swap", action="store_true", default=None,
                   help="judge both presentation orders; disagreement counts as a tie")
    p.add_argument("--no-self-improve", dest="self_improve", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tkcts", description="Top-K comparative tree search")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="search one task")
    _search_flags(run)
    run.add_argument("--task", help="task JSON file")
    run.add_argument("--transcript", help="scripted-provider fixture instead of a live endpoint")
    run.add_argument("--exec-cmd", help="interpreter command; {file} is replaced by the program path")
    run.add_argument("--templates-dir", help="directory overriding the default prompt templates")
    run.add_argument("--out-dir", help="output directory (default: ./tkcts-out)")
    run.add_argument("--redact", action="store_true", default=None,
                     help="strip code bodies from the trace (such traces cannot be replayed)")
    run.add_argument("--price-table", help="JSON {model: [dollars per prompt token, dollars per completion token]}")

    sim = sub.add_parser("simulate", help="compare comparators on synthetic tasks")
    sim.add_argument("--config", help="simulate config JSON (synth, comparators, trials, seed, search)")
    sim.add_argument("--trials", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out-dir", default="tkcts-sim")

    sweep = sub.add_parser("sweep-k", help="sweep the number of kept frontier nodes")
    sweep.add_argument("--config", help="simulate config JSON; its synth and search sections are used")
    sweep.add_argument("--ks", default="1,2,3,4,5", help="comma-separated K values")
    sweep.add_argument("--trials", type=int)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out-dir", default="tkcts-sweep")

    rep = sub.add_parser("replay", help="re-run a recorded trace and check it reproduces")
    rep.add_argument("trace")
    rep.add_argument("--out", help="write the replayed trace here")

    report = sub.add_parser("report", help="aggregate run summaries under a directory")
    report.add_argument("directory")
    report.add_argument("--out", help="write the aggregate table as JSON")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    from tkcts.engine import SearchDeps, run_search
    from tkcts.execution import LocalExecutor, parse_exec_cmd
    from tkcts.llm import HttpProvider, ScriptedProvider, load_price_table
    from tkcts.prompts import TemplateSet
    from tkcts.trace import JsonlSink, Tracer

    cfg, opts = resolve_settings(args)
    if not opts["task"]:
        raise ConfigError("task", "required (--task or \"task\" in the config file)")
    task = TaskSpec.load(opts["task"])
    out_dir = Path(opts["out_dir"] or "tkcts-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    provider = ScriptedProvider.load(opts["transcript"]) if opts["transcript"] else HttpProvider.from_env()
    templates = TemplateSet(opts["templates_dir"]) if opts["templates_dir"] else None
    prices = load_price_table(opts["price_table"]) if opts["price_table"] else None
    executor = LocalExecutor(out_dir / "workspaces", task.input_dir, parse_exec_cmd(opts["exec_cmd"]),
                             cfg.exec_timeout_seconds)
    tracer = Tracer([JsonlSink(out_dir / "trace.jsonl", redact=bool(opts["redact"]))], keep=False)
    started = time.monotonic()
    try:
        outcome = run_search(task, cfg, SearchDeps(provider, executor, templates=templates,
                                                   price_table=prices, tracer=tracer))
    finally:
        tracer.close()
    final = outcome.final
    (out_dir / "final_program.py").write_text(final.code if final is not None else "")
    summary = {
        "task_id": task.id,
        "final_node": outcome.final_node,
        "status": final.status.value if final is not None else None,
        "ver": final is not None and final.status is Status.EXECUTABLE,
        "steps_used": outcome.ledger.expansion_steps_used,
        "comparisons_used": outcome.ledger.comparisons_used,
        "dollars": outcome.ledger.dollars,
        "wall_seconds": time.monotonic() - started,
        "stop_reason": outcome.stop_reason.value,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def _simulate_config(args: argparse.Namespace):
    from tkcts.sim.analysis import SimulateConfig

    config = SimulateConfig.load(args.config) if args.config else SimulateConfig()
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        config.trials = args.trials
    if args.seed is not None:
        config.seed = args.seed
    return config


def cmd_simulate(args: argparse.Namespace) -> int:
    from tkcts.sim.analysis import simulate

    summary = simulate(_simulate_config(args), args.out_dir)
    for name, entry in summary.items():
        p = entry["p_vs_random"]
        print(f"{name:14s} mean={entry['mean']:.4f} stderr={entry['stderr']:.4f} "
              f"success={entry['success_rate']:.3f} p_vs_random={'-' if p is None else f'{p:.3g}'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from tkcts.sim.analysis import sweep_k

    config = _simulate_config(args)
    try:
        ks = [int(x) for x in args.ks.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("ks", f"expected comma-separated integers, got {args.ks!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("ks", "need at least one K >= 1")
    result = sweep_k(ks, config.trials, config.synth, config.seed, config.search)
    out = Path(args.out_dir)
    result.write_csv(out / "sweep_k.csv")
    (out / "sweep_k.json").write_text(json.dumps({"rows": result.rows, "best_k": result.best_k}, indent=2) + "\n")
    for row in result.rows:
        print(f"k={row['k']} mean_final_quality={row['mean_final_quality']:.4f} "
              f"mean_comparator_calls={row['mean_comparator_calls']:.2f}")
    print(f"best_k={result.best_k}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    from tkcts.trace import replay

    outcome = replay(args.trace, args.out)
    print(json.dumps({"final_node": outcome.final_node, "stop_reason": outcome.stop_reason.value,
                      "reproduced": True}))
    return 0


def _mean_std(values: list[float]) -> dict[str, float]:
    n = len(values)
    mean = sum(values) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return {"mean": mean, "std": std}


REPORT_FIELDS = ("ver", "success", "steps_used", "comparisons_used", "dollars", "wall_seconds")


def aggregate_summaries(paths: Sequence[Path]) -> dict[str, Any]:
    """Per-task and overall mean/std over repeated runs.

    ``success`` is reported only for summaries that carry it (it needs an
    external evaluation of the final program).
    """
    by_task: dict[str, list[dict]] = {}
    for path in paths:
        data = _read_json(path, str(path))
        if not isinstance(data, dict) or "task_id" not in data:
            raise ConfigError(str(path), "not a run summary (missing task_id)")
        by_task.setdefault(data["task_id"], []).append(data)

    def table(rows: list[dict]) -> dict[str, Any]:
        out: dict[str, Any] = {"runs": len(rows)}
        for name in REPORT_FIELDS:
            values = [float(r[name]) for r in rows if r.get(name) is not None]
            if values:
                out[name] = _mean_std(values)
        return out

    tasks = {task: table(rows) for task, rows in sorted(by_task.items())}
    overall = table([r for rows in by_task.values() for r in rows])
    return {"tasks": tasks, "overall": overall}


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.directory)
    if not root.is_dir():
        raise ConfigError("directory", f"not a directory: {root}")
    paths = sorted(root.rglob("summary.json"))
    if not paths:
        raise ConfigError("directory", f"no summary.json files under {root}")
    result = aggregate_summaries(paths)
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print(f"{'task':24s} {'runs':>4s} {'VER':>13s} {'comparisons':>15s} {'dollars':>17s}")
    for task, row in list(result["tasks"].items()) + [("(overall)", result["overall"])]:
        def cell(name: str, fmt: str) -> str:
            stats = row.get(name)
            return "-" if stats is None else f"{stats['mean']:{fmt}}±{stats['std']:{fmt}}"
        print(f"{task:24s} {row['runs']:4d} {cell('ver', '.3f'):>13s} "
              f"{cell('comparisons_used', '.1f'):>15s} {cell('dollars', '.4f'):>17s}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "sweep-k": cmd_sweep,
    "replay": cmd_replay,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help.
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"tkcts: config error at {exc.path}: {exc.message}", file=sys.stderr)
        return 2
    except (TkctsError, OSError, ValueError) as exc:
        print(f"tkcts: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
