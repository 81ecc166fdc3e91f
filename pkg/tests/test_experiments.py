"""Splits, metrics, aggregation, benchmark harness, labeling time."""
from __future__ import annotations

import json

import numpy as np
import pytest

import rarequery as rq
from rarequery.engine import Strategy
from rarequery.experiments import (
    ConfusionMetrics,
    SplitSpec,
    TrialResult,
    aggregate_metric,
    confusion_metrics,
    labeling_time,
    make_split,
    mean_sem,
    run_active_benchmark,
    run_passive_trial,
    write_benchmark,
)
from rarequery.tilestore import NEGATIVE, POSITIVE, SOURCE_GROUND_TRUTH

from conftest import make_small_site, manual_tileset


def labeled_dummy_tileset(n_pos: int, n_neg: int) -> rq.Tileset:
    labels = np.array([POSITIVE] * n_pos + [NEGATIVE] * n_neg, dtype=np.int8)
    return manual_tileset(np.ones((n_pos + n_neg, 1, 1)), labels=labels)


# ---------------- splits ----------------


def test_paper_scale_passive_split_sizes():
    ts = labeled_dummy_tileset(89, 9_683)
    train, test = make_split(ts, SplitSpec(balance_train=True, seed=0))
    assert len(train) == 142 and len(test) == 36
    assert (ts.labels[test] == POSITIVE).sum() == 18
    assert (ts.labels[train] == POSITIVE).sum() == 71
    assert not set(train) & set(test)


def test_paper_scale_active_split_sizes():
    ts = labeled_dummy_tileset(89, 9_683)
    train, test = make_split(ts, SplitSpec(balance_train=False, seed=0))
    assert len(train) == 9_736 and len(test) == 36
    assert (ts.labels[train] == NEGATIVE).sum() == 9_665


def test_small_balanced_split_arithmetic():
    ts = labeled_dummy_tileset(10, 10)
    train, test = make_split(ts, SplitSpec(balance_train=True, seed=1))
    assert len(train) == 16 and len(test) == 4
    assert (ts.labels[test] == POSITIVE).sum() == 2


def test_split_shares_test_set_across_modes():
    ts = labeled_dummy_tileset(20, 200)
    _, test_passive = make_split(ts, SplitSpec(balance_train=True, seed=7))
    _, test_active = make_split(ts, SplitSpec(balance_train=False, seed=7))
    assert np.array_equal(test_passive, test_active)


def test_split_deterministic_per_seed():
    ts = labeled_dummy_tileset(12, 50)
    a = make_split(ts, SplitSpec(seed=3))
    b = make_split(ts, SplitSpec(seed=3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = make_split(ts, SplitSpec(seed=4))
    assert not np.array_equal(a[0], c[0])


def test_split_with_too_few_positives_rejected():
    ts = labeled_dummy_tileset(1, 50)
    with pytest.raises(ValueError):
        make_split(ts, SplitSpec(seed=0))


# ---------------- confusion metrics ----------------


def test_perfect_predictions():
    m = confusion_metrics([1, 0, 1, 0], [1, 0, 1, 0])
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_all_negative_predictions_on_balanced_test():
    m = confusion_metrics([0, 0, 0, 0], [1, 1, 0, 0])
    assert m.accuracy == 0.5
    assert m.recall == 0.0
    assert m.precision is None  # zero denominator marked undefined
    assert m.f1 is None


def test_hand_counted_confusion_example():
    pred = [1] * 8 + [1] * 2 + [0] * 2 + [0] * 24
    truth = [1] * 8 + [0] * 2 + [1] * 2 + [0] * 24
    m = confusion_metrics(pred, truth)
    assert m.tp == 8 and m.fp == 2 and m.fn == 2 and m.tn == 24
    assert m.precision == pytest.approx(0.8)
    assert m.recall == pytest.approx(0.8)
    assert m.f1 == pytest.approx(0.8)
    assert m.accuracy == pytest.approx(32 / 36)


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion_metrics([1, 0], [1])


# ---------------- aggregation ----------------


def test_sem_matches_direct_oracle():
    rng = np.random.default_rng(0)
    values = rng.normal(size=17).tolist()
    mean, sem = mean_sem(values)
    assert mean == pytest.approx(np.mean(values))
    assert sem == pytest.approx(np.std(values, ddof=1) / np.sqrt(17))


def test_aggregate_excludes_undefined_with_count():
    agg = aggregate_metric([0.5, None, 0.7, None])
    assert agg["excluded"] == 2 and agg["n"] == 2
    assert agg["mean"] == pytest.approx(0.6)


# ---------------- labeling time ----------------


def test_labeling_time_paper_rows():
    full = labeling_time(9_736)
    assert full.seconds == 9_736 * 30 == 292_080
    assert full.hours_rounded == 81
    assert full.render() == "81 hours"
    active = labeling_time(500)
    assert active.seconds == 15_000
    assert active.minutes_rounded == 250
    assert active.render() == "250 mins"
    assert labeling_time(200).render() == "100 mins"
    assert labeling_time(0).seconds == 0


def test_labeling_time_rejects_negatives():
    with pytest.raises(ValueError):
        labeling_time(-1)


# ---------------- passive trials ----------------


@pytest.fixture(scope="module")
def passive_site():
    ts, _ = make_small_site(seed=23, extent_m=540.0, positives=25)
    rq.compute_metric(ts)
    return ts


def test_passive_trial_deterministic(passive_site):
    a = run_passive_trial(passive_site, "thermal", seed=5)
    b = run_passive_trial(passive_site, "thermal", seed=5)
    assert a.to_json() == b.to_json()


def test_passive_thermal_learns_high_contrast_site(passive_site):
    from rarequery.engine import compute_feature_cache

    cache = compute_feature_cache(passive_site, ("thermal",))
    accs = [
        run_passive_trial(passive_site, "thermal", seed=s, feature_cache=cache).accuracy
        for s in range(30)
    ]
    assert np.mean(accs) >= 0.9


def test_passive_on_pure_noise_is_chance_level(passive_site):
    rng = np.random.default_rng(99)
    noisy = rq.Tileset(
        modalities=passive_site.modalities,
        pixels={
            "thermal": passive_site.pixels["thermal"],
            "rgb": rng.normal(0.5, 0.2, passive_site.pixels["rgb"].shape).astype(np.float32),
        },
        centers=passive_site.centers,
        labels=passive_site.labels,
        label_sources=passive_site.label_sources,
        crop=passive_site.crop,
        resolutions=passive_site.resolutions,
    )
    accs = [run_passive_trial(noisy, "rgb", seed=s).accuracy for s in range(30)]
    assert abs(float(np.mean(accs)) - 0.5) < 0.1


def test_passive_trial_rejects_unbalanced_spec(passive_site):
    with pytest.raises(ValueError):
        run_passive_trial(passive_site, "thermal", seed=0, split_spec=SplitSpec(balance_train=False))


# ---------------- active benchmark ----------------


@pytest.fixture(scope="module")
def bench_result(passive_site):
    strategies = {
        "multimodal": Strategy("multimodal_single", ("thermal",)),
        "random": Strategy("random", ("thermal",)),
    }
    return run_active_benchmark(
        passive_site,
        strategies,
        budget=60,
        checkpoint_every=20,
        trials=4,
        batch_size=10,
        base_seed=0,
        passive_modalities=("thermal",),
    )


def test_benchmark_structure(bench_result):
    assert set(bench_result.aggregates) == {"multimodal", "random"}
    agg = bench_result.aggregates["multimodal"]
    assert agg.budgets == [20, 40, 60]
    assert agg.n_trials == 4
    assert len(agg.mean_found) == 3


def test_benchmark_found_curves_monotone(bench_result):
    for trial in bench_result.trials:
        found = [pt["positives_found"] for pt in trial.curve]
        assert all(b >= a for a, b in zip(found, found[1:]))


def test_benchmark_has_pairwise_significance(bench_result):
    assert "multimodal|random" in bench_result.significance
    assert 0.0 <= bench_result.significance["multimodal|random"] <= 1.0


def test_benchmark_includes_passive_reference(bench_result):
    passive = [t for t in bench_result.trials if t.strategy_id == "passive:thermal"]
    assert len(passive) == 4
    assert all(t.accuracy is not None for t in passive)


def test_benchmark_multimodal_finds_more_than_random(bench_result):
    def found_at_end(name):
        return np.mean(
            [t.curve[-1]["positives_found"] for t in bench_result.trials if t.strategy_id == name]
        )

    assert found_at_end("multimodal") > found_at_end("random")


def test_random_baseline_matches_uniform_expectation(passive_site):
    strategies = {"random": Strategy("random", ("thermal",))}
    res = run_active_benchmark(
        passive_site, strategies, budget=100, checkpoint_every=100,
        trials=12, batch_size=20, base_seed=50,
    )
    found, expected = [], []
    for t in res.trials:
        n_train = len(passive_site) - 10  # balanced test of 2*5 positives
        expected.append(100 * t.meta["train_positives"] / n_train)
        found.append(t.curve[-1]["positives_found"])
    # uniform sampling law within generous Monte-Carlo slack
    assert abs(np.mean(found) - np.mean(expected)) < 1.5


def test_write_benchmark_outputs(bench_result, tmp_path):
    out = write_benchmark(bench_result, tmp_path / "results")
    raw = (out / "raw_trials.jsonl").read_text().splitlines()
    assert len(raw) == len(bench_result.trials)
    TrialResult.from_json(raw[0])
    agg_lines = (out / "aggregate.csv").read_text().splitlines()
    assert agg_lines[0] == "strategy,budget,mean_acc,sem_acc,mean_found,sem_found"
    assert len(agg_lines) == 1 + 2 * 3  # 2 strategies x 3 checkpoints
    curves = (out / "curves.csv").read_text().splitlines()
    assert curves[0].startswith("budget,")
    assert json.loads((out / "significance.json").read_text())
