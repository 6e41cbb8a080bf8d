"""Evaluation workflows over simulated trials: comparator comparison, K sweep, ablation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from tkcts.core import ComparatorKind, ConfigError, SearchConfig
from tkcts.sim.stats import mann_whitney_u
from tkcts.sim.synth import ErrorClass, RunMetrics, SynthParams, run_trials


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("no values")
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), stderr


def error_breakdown(metrics: Sequence[RunMetrics]) -> dict[str, float]:
    """Share of failed trials per error class (sums to 1 when any trial failed)."""
    failed = [m for m in metrics if not m.success]
    classes = [c for c in ErrorClass if c is not ErrorClass.NONE]
    if not failed:
        return {c.value: 0.0 for c in classes}
    return {c.value: sum(m.error_class is c for m in failed) / len(failed) for c in classes}


def summarize(metrics: Sequence[RunMetrics]) -> dict[str, Any]:
    quality, stderr = mean_stderr([m.final_quality for m in metrics])
    return {
        "trials": len(metrics),
        "mean": quality,
        "stderr": stderr,
        "success_rate": float(np.mean([m.success for m in metrics])),
        "ver": float(np.mean([m.ver for m in metrics])),
        "mean_regret": float(np.mean([m.regret for m in metrics])),
        "mean_comparisons": float(np.mean([m.comparisons for m in metrics])),
        "mean_llm_calls": float(np.mean([m.llm_calls for m in metrics])),
        "errors": error_breakdown(metrics),
    }


def compare_comparators(cfg: SearchConfig, params: SynthParams, kinds: Sequence[ComparatorKind | str],
                        trials: int, seed: int = 0) -> tuple[dict[str, dict], dict[str, list[RunMetrics]]]:
    """Run every comparator on the same seed family.

    The summary maps comparator name to ``{mean, stderr, p_vs_random, ...}``
    where ``p_vs_random`` is the one-sided Mann-Whitney p-value for final
    quality above the random comparator (None when random is not in the list
    or for random itself).
    """
    per_kind: dict[str, list[RunMetrics]] = {}
    for kind in kinds:
        kind = ComparatorKind.parse(kind)
        if kind is ComparatorKind.RUBRIC_ABSOLUTE:
            raise ConfigError("comparators", "rubric_absolute needs a task rubric; the synthetic task has none")
        per_kind[kind.value] = run_trials(replace(cfg, comparator_kind=kind), params, trials, seed)
    baseline = per_kind.get(ComparatorKind.RANDOM.value)
    summary: dict[str, dict] = {}
    for name, metrics in per_kind.items():
        entry = summarize(metrics)
        entry["p_vs_random"] = None
        if baseline is not None and name != ComparatorKind.RANDOM.value:
            entry["p_vs_random"] = mann_whitney_u(
                [m.final_quality for m in metrics], [m.final_quality for m in baseline]
            ).p_greater
        summary[name] = entry
    return summary, per_kind


@dataclass
class SweepResult:
    rows: list[dict[str, Any]]
    best_k: int
    qualities: dict[int, list[float]] = field(default_factory=dict)
    comparisons: dict[int, list[int]] = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        write_rows(path, self.rows)


def sweep_k(ks: Sequence[int], trials: int, params: SynthParams | None = None, seed: int = 0,
            base: SearchConfig | None = None) -> SweepResult:
    """Mean final quality and comparator calls per K.

    Every K runs on the same per-trial seed streams, so the rows differ only
    through K. ``best_k`` is the K with the highest mean quality (smallest K
    on ties).
    """
    if not ks:
        raise ValueError("ks must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = params or SynthParams()
    base = base or SearchConfig()
    rows = []
    qualities: dict[int, list[float]] = {}
    comparisons: dict[int, list[int]] = {}
    for k in ks:
        metrics = run_trials(replace(base, k=k), params, trials, seed)
        qualities[k] = [m.final_quality for m in metrics]
        comparisons[k] = [m.comparisons for m in metrics]
        mean_q, stderr = mean_stderr(qualities[k])
        rows.append({
            "k": k,
            "mean_final_quality": mean_q,
            "stderr_final_quality": stderr,
            "mean_comparator_calls": float(np.mean(comparisons[k])),
            "success_rate": float(np.mean([m.success for m in metrics])),
            "mean_llm_calls": float(np.mean([m.llm_calls for m in metrics])),
        })
    best = max(rows, key=lambda r: (r["mean_final_quality"], -r["k"]))
    return SweepResult(rows, int(best["k"]), qualities, comparisons)


ABLATION_ARMS = ((1, False), (2, False), (5, False), (5, True))


def ablation(trials: int, params: SynthParams | None = None, seed: int = 0,
             base: SearchConfig | None = None) -> list[dict[str, Any]]:
    """Success rate by number of initial drafts, with and without self-improvement."""
    params = params or SynthParams()
    base = base or SearchConfig()
    rows = []
    for n_initial, improve in ABLATION_ARMS:
        metrics = run_trials(replace(base, n_initial=n_initial, self_improve=improve), params, trials, seed)
        rows.append({
            "n_initial": n_initial,
            "self_improve": improve,
            "success_rate": float(np.mean([m.success for m in metrics])),
            "mean_final_quality": float(np.mean([m.final_quality for m in metrics])),
            "successes": [int(m.success) for m in metrics],
        })
    return rows


def write_rows(path: str | Path, rows: Sequence[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class SimulateConfig:
    synth: SynthParams = field(default_factory=SynthParams)
    comparators: list[str] = field(default_factory=lambda: ["relative", "llm_absolute", "random"])
    trials: int = 500
    seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SimulateConfig:
        known = {"synth", "comparators", "trials", "seed", "search"}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        trials = data.get("trials", 500)
        if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
            raise ConfigError("trials", f"must be an integer >= 1, got {trials!r}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed", "must be an integer")
        comparators = data.get("comparators", ["relative", "llm_absolute", "random"])
        if not isinstance(comparators, list) or not comparators:
            raise ConfigError("comparators", "must be a non-empty list")
        for i, name in enumerate(comparators):
            try:
                ComparatorKind.parse(name)
            except ConfigError as exc:
                raise ConfigError(f"comparators[{i}]", exc.message) from None
        synth = data.get("synth", {})
        if not isinstance(synth, dict):
            raise ConfigError("synth", "must be an object")
        search = data.get("search", {})
        if not isinstance(search, dict):
            raise ConfigError("search", "must be an object")
        return cls(
            synth=SynthParams.from_dict(synth),
            comparators=[ComparatorKind.parse(c).value for c in comparators],
            trials=trials,
            seed=seed,
            search=SearchConfig.from_dict(search, prefix="search"),
        )

    @classmethod
    def load(cls, path: str | Path) -> SimulateConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(data)


def simulate(config: SimulateConfig, out_dir: str | Path) -> dict[str, dict]:
    """Writes ``metrics.csv`` (one row per trial) and ``summary.json``; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, per_kind = compare_comparators(config.search, config.synth, config.comparators,
                                            config.trials, config.seed)
    rows = []
    for name, metrics in per_kind.items():
        for trial, m in enumerate(metrics):
            rows.append({"comparator": name, "trial": trial, **m.to_row()})
    write_rows(out / "metrics.csv", rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
