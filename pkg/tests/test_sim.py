import itertools
import json
import math

import numpy as np
import pytest
from scipy import stats as sp

from tkcts.core import ConfigError, SearchConfig
from tkcts.sim.analysis import (
    SimulateConfig,
    ablation,
    compare_comparators,
    error_breakdown,
    simulate,
    summarize,
    sweep_k,
)
from tkcts.sim.stats import mann_whitney_u, midranks
from tkcts.sim.synth import (
    ErrorClass,
    Latent,
    SynthParams,
    SyntheticExecutor,
    decode_latents,
    encode_latent,
    oracle_judge,
    run_trial,
    run_trials,
)


def test_oracle_judge_examples():
    rng = np.random.default_rng(0)
    v = oracle_judge(0.9, 0.2, 1.0, rng)
    assert v.winner == "A" and v.rating_a > v.rating_b
    assert oracle_judge(0.4, 0.4, 0.8, rng).winner == "tie"
    with pytest.raises(ValueError):
        oracle_judge(0.1, 0.2, 0.3, rng)


def test_oracle_judge_accuracy_is_binomial():
    rng = np.random.default_rng(12345)
    n = 100_000
    correct = sum(oracle_judge(0.9, 0.2, 0.8, rng).winner == "A" for _ in range(n))
    assert abs(correct - 0.8 * n) < 3 * math.sqrt(n * 0.8 * 0.2)


def test_latent_round_trip_and_executor():
    code = encode_latent(Latent(0.625, True)) + "\nprint()"
    assert decode_latents(code) == [Latent(0.625, True)]
    assert SyntheticExecutor().run(0, code).exit_kind.value == "nonzero"
    assert SyntheticExecutor().run(0, encode_latent(Latent(0.5, False))).exit_kind.value == "ok"
    assert SyntheticExecutor().run(0, "").exit_kind.value == "nonzero"


def test_synth_params_validation():
    with pytest.raises(ConfigError) as exc:
        SynthParams(bug_prob=1.5)
    assert exc.value.path == "synth.bug_prob"
    with pytest.raises(ConfigError):
        SynthParams(pairwise_accuracy=0.4)
    with pytest.raises(ConfigError):
        SynthParams.from_dict({"colour": 1})
    assert SynthParams.from_dict(SynthParams().to_dict()) == SynthParams()


def test_forced_success_trial_has_no_error():
    params = SynthParams(initial_quality_low=0.9, initial_quality_high=0.9, bug_prob=0.0,
                         improve_bug_prob=0.0, pairwise_accuracy=1.0)
    [m] = run_trials(SearchConfig(), params, 1, seed=3)
    assert m.success and m.ver and m.error_class is ErrorClass.NONE and m.regret >= 0


def test_forced_unexecutable_trial():
    params = SynthParams(bug_prob=1.0, debug_success_prob=0.0)
    [m] = run_trials(SearchConfig(), params, 1, seed=3)
    assert not m.ver and m.error_class is ErrorClass.EXPLORATION_NOT_EXECUTABLE


def test_run_trials_rejects_zero():
    with pytest.raises(ValueError):
        run_trials(SearchConfig(), SynthParams(), 0)
    with pytest.raises(ValueError):
        sweep_k([1, 2], 0)
    with pytest.raises(ValueError):
        sweep_k([], 5)


def test_trials_reproducible_and_independent():
    a = run_trials(SearchConfig(), SynthParams(), 5, seed=9)
    b = run_trials(SearchConfig(), SynthParams(), 5, seed=9)
    assert a == b
    assert len({m.final_quality for m in a}) > 1


def test_error_classes_partition_failures():
    metrics = run_trials(SearchConfig(), SynthParams(pairwise_accuracy=0.7), 200, seed=4)
    for m in metrics:
        assert (m.error_class is ErrorClass.NONE) == m.success
        assert m.regret >= -1e-12
    shares = error_breakdown(metrics)
    assert math.isclose(sum(shares.values()), 1.0)
    assert shares["verification"] > 0


def test_verification_error_iff_missed_success():
    for seed in range(40):
        metrics, outcome = run_trial(SearchConfig(), SynthParams(pairwise_accuracy=0.6), seed)
        if metrics.error_class is ErrorClass.VERIFICATION:
            assert metrics.regret > 0 and not metrics.success


def test_summary_fields():
    summary = summarize(run_trials(SearchConfig(), SynthParams(), 20, seed=1))
    assert {"mean", "stderr", "success_rate", "ver", "errors"} <= set(summary)


def test_mann_whitney_examples():
    r = mann_whitney_u([1, 2], [3, 4])
    assert r.u == 0 and r.exact and abs(r.p_two_sided - 1 / 3) < 1e-12
    assert mann_whitney_u([1, 2, 2, 5], [5, 2, 1, 2]).p_two_sided == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mann_whitney_u([], [1])
    assert mann_whitney_u([0.1], [0.2]).significant() is False


def test_midranks_share_ties():
    assert list(midranks([3, 1, 3, 2])) == [3.5, 1.0, 3.5, 2.0]


@pytest.mark.parametrize("seed", range(5))
def test_mann_whitney_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(0.2, 1, 8), rng.normal(0, 1, 9)
    ours = mann_whitney_u(x, y)
    ref = sp.mannwhitneyu(x, y, alternative="two-sided", method="exact")
    assert ours.u == ref.statistic and ours.p_two_sided == pytest.approx(ref.pvalue, abs=1e-12)
    x, y = rng.integers(0, 5, 60), rng.integers(0, 6, 70)
    ours = mann_whitney_u(x, y)
    ref = sp.mannwhitneyu(x, y, alternative="greater", method="asymptotic", use_continuity=True)
    assert not ours.exact and ours.p_greater == pytest.approx(ref.pvalue, rel=1e-9)


def test_mann_whitney_exact_with_ties_against_enumeration():
    x, y = [1, 2, 2, 3], [2, 3, 3]
    pooled = x + y
    ranks = midranks(pooled)
    observed = ranks[:4].sum()
    center = 4 * (len(pooled) + 1) / 2
    sums = [ranks[list(c)].sum() for c in itertools.combinations(range(7), 4)]
    expected = sum(abs(s - center) >= abs(observed - center) - 1e-9 for s in sums) / len(sums)
    assert mann_whitney_u(x, y).p_two_sided == pytest.approx(expected, abs=1e-12)


def test_coin_flip_judge_matches_random():
    summary, per_kind = compare_comparators(SearchConfig(), SynthParams(pairwise_accuracy=0.5),
                                            ["relative", "random"], 500, seed=0)
    rel = [m.final_quality for m in per_kind["relative"]]
    rnd = [m.final_quality for m in per_kind["random"]]
    assert mann_whitney_u(rel, rnd).p_two_sided > 0.05


def test_quality_nondecreasing_in_judge_accuracy():
    means, errs = [], []
    for acc in (0.5, 0.7, 0.9, 1.0):
        summary = summarize(run_trials(SearchConfig(), SynthParams(pairwise_accuracy=acc), 300, seed=6))
        means.append(summary["mean"])
        errs.append(summary["stderr"])
    inversions = [(i, means[i] - means[i + 1]) for i in range(3) if means[i + 1] < means[i]]
    assert len(inversions) <= 1
    assert all(gap <= errs[i] for i, gap in inversions)


def test_rubric_comparator_not_simulated():
    with pytest.raises(ConfigError):
        compare_comparators(SearchConfig(), SynthParams(), ["rubric_absolute"], 2)


def test_sweep_rows_and_csv(tmp_path):
    result = sweep_k([1, 2], 20, seed=2)
    assert [r["k"] for r in result.rows] == [1, 2]
    assert result.best_k in (1, 2)
    result.write_csv(tmp_path / "k.csv")
    header = (tmp_path / "k.csv").read_text().splitlines()[0]
    assert header.startswith("k,mean_final_quality")


def test_ablation_arms():
    rows = ablation(10, seed=1)
    assert [(r["n_initial"], r["self_improve"]) for r in rows] == [(1, False), (2, False), (5, False), (5, True)]


def test_simulate_writes_outputs(tmp_path):
    cfg = SimulateConfig.from_dict({"trials": 10, "comparators": ["relative", "random"],
                                    "synth": {"pairwise_accuracy": 0.9}, "search": {"k": 2}})
    summary = simulate(cfg, tmp_path)
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved.keys() == summary.keys() == {"relative", "random"}
    assert saved["random"]["p_vs_random"] is None and 0 <= saved["relative"]["p_vs_random"] <= 1
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 21


@pytest.mark.parametrize("data,path", [
    ({"trials": 0}, "trials"),
    ({"comparators": ["best"]}, "comparators[0]"),
    ({"search": {"k": 0}}, "search.k"),
    ({"colour": 1}, "colour"),
])
def test_simulate_config_errors(data, path):
    with pytest.raises(ConfigError) as exc:
        SimulateConfig.from_dict(data)
    assert exc.value.path == path
