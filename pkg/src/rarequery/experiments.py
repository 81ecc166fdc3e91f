"""Experiment protocols: passive training, active benchmarks, aggregation.

Passive trials train once on a balanced labeled split; active benchmarks
replay every query strategy over the same per-trial split with a
simulated ground-truth labeler, recording accuracy and the fraction of
positives found at fixed label budgets, aggregated as mean with standard
error over seeded trials.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .classifier import TileNetClassifier
from .engine import (
    ActiveSession,
    Strategy,
    compute_feature_cache,
    ground_truth_oracle,
)
from .tilestore import NEGATIVE, POSITIVE, UNLABELED, Tileset


@dataclass(frozen=True)
class SplitSpec:
    """Train/test carve-out: balanced test, optionally balanced train."""

    positive_train_fraction: float = 0.8
    balance_train: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.positive_train_fraction < 1.0:
            raise ValueError("positive_train_fraction must lie in (0, 1)")


def make_split(tileset: Tileset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (train ids, test ids); requires full ground-truth labels.

    The test set is balanced (equal positives and negatives). Balanced-train
    mode samples as many negatives as train positives; otherwise every
    remaining negative stays in the train pool. The test carve-out draws
    identically for both modes under the same seed, so passive and active
    protocols can share test sets trial by trial.
    """
    labels = tileset.labels
    if (labels == UNLABELED).any():
        raise ValueError("split requires a fully labeled tileset")
    rng = np.random.default_rng(spec.seed)
    pos = np.nonzero(labels == POSITIVE)[0]
    neg = np.nonzero(labels == NEGATIVE)[0]
    n_pos = len(pos)
    n_train_pos = int(np.floor(spec.positive_train_fraction * n_pos))
    n_test_pos = n_pos - n_train_pos
    if n_train_pos < 1 or n_test_pos < 1:
        raise ValueError(
            f"{n_pos} positives cannot support a "
            f"{spec.positive_train_fraction:.0%} train split"
        )
    if len(neg) < n_test_pos + (n_train_pos if spec.balance_train else 0):
        raise ValueError("not enough negatives for the requested split")

    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    train_pos, test_pos_ids = pos[:n_train_pos], pos[n_train_pos:]
    test_neg = neg[:n_test_pos]
    rest_neg = neg[n_test_pos:]
    train_neg = rest_neg[:n_train_pos] if spec.balance_train else rest_neg
    train = np.sort(np.concatenate([train_pos, train_neg]))
    test = np.sort(np.concatenate([test_pos_ids, test_neg]))
    return train, test


@dataclass(frozen=True)
class ConfusionMetrics:
    """Standard binary metrics; None marks a zero-denominator (undefined)."""

    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_metrics(predictions, labels) -> ConfusionMetrics:
    pred = np.asarray(predictions, dtype=int)
    truth = np.asarray(labels, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    tn = int(((pred == 0) & (truth == 0)).sum())
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ConfusionMetrics(accuracy, precision, recall, f1, tp, fp, fn, tn)


@dataclass
class TrialResult:
    """Outcome of one seeded trial (passive metrics or an active curve)."""

    strategy_id: str
    seed: int
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    curve: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialResult":
        return cls(**json.loads(line))


def _derived_seed(seed: int, salt: int = 0) -> int:
    return (seed * 1000003 + salt) % 2**31


def run_passive_trial(
    tileset: Tileset,
    modality: str,
    seed: int,
    classifier_params: dict | None = None,
    split_spec: SplitSpec | None = None,
    feature_cache: dict | None = None,
) -> TrialResult:
    """Train one classifier on the balanced split and score the test set."""
    spec = split_spec or SplitSpec(balance_train=True, seed=seed)
    if not spec.balance_train:
        raise ValueError("passive trials use a balanced training set")
    train, test = make_split(tileset, spec)
    cache = feature_cache or compute_feature_cache(
        tileset, [modality], (classifier_params or {}).get("pool_size", 8)
    )
    features, scale = cache[modality]
    params = {"learning_rate": 1e-2}
    params.update(classifier_params or {})
    clf = TileNetClassifier(init_seed=_derived_seed(seed), pixel_scale=scale, **params)
    clf.setup_features(features.shape[1])
    y = (tileset.labels[train] == POSITIVE).astype(float)
    clf.train_features(features[train], y, rng=np.random.default_rng(_derived_seed(seed, 1)))
    pred = (clf.proba_features(features[test]) >= clf.decision_threshold).astype(int)
    m = confusion_metrics(pred, (tileset.labels[test] == POSITIVE).astype(int))
    return TrialResult(
        strategy_id=f"passive:{modality}",
        seed=seed,
        accuracy=m.accuracy,
        precision=m.precision,
        recall=m.recall,
        f1=m.f1,
        meta={
            "train_size": int(len(train)),
            "test_size": int(len(test)),
            "classifier_params": params,
        },
    )


@dataclass
class Aggregate:
    """Mean and standard error per budget checkpoint across trials."""

    strategy_id: str
    budgets: list[int]
    mean_accuracy: list[float]
    sem_accuracy: list[float]
    mean_found: list[float]
    sem_found: list[float]
    n_trials: int


def mean_sem(values) -> tuple[float, float]:
    vals = np.asarray([v for v in values if v is not None], dtype=float)
    if len(vals) == 0:
        return float("nan"), float("nan")
    if len(vals) == 1:
        return float(vals[0]), 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def aggregate_metric(values) -> dict:
    """Mean/SEM over defined values, tracking how many were undefined."""
    excluded = sum(1 for v in values if v is None)
    mean, sem = mean_sem(values)
    return {"mean": mean, "sem": sem, "n": len(values) - excluded, "excluded": excluded}


@dataclass
class BenchmarkResult:
    aggregates: dict[str, Aggregate]
    trials: list[TrialResult]
    significance: dict[str, float]
    checkpoints: list[int]


def _curve_at(curve: list[dict], budget: int) -> dict | None:
    """Last curve entry with labels_used <= budget."""
    best = None
    for entry in curve:
        if entry["labels_used"] <= budget:
            best = entry
        else:
            break
    return best


def run_active_benchmark(
    tileset: Tileset,
    strategies: dict[str, Strategy],
    budget: int = 500,
    checkpoint_every: int = 50,
    trials: int = 30,
    batch_size: int = 10,
    base_seed: int = 0,
    classifier_params: dict | None = None,
    passive_modalities: tuple[str, ...] = (),
) -> BenchmarkResult:
    """Run every strategy over seeded paired trials and aggregate the curves.

    Each trial fixes one split (balanced test, all remaining negatives in
    the train pool) shared by all strategies; sessions query the simulated
    ground-truth labeler. Optional passive reference models train on the
    balanced variant of the same trial split.
    """
    checkpoints = list(range(checkpoint_every, budget + 1, checkpoint_every))
    modalities = {m for s in strategies.values() for m in s.modalities}
    modalities.update(passive_modalities)
    pool = (classifier_params or {}).get("pool_size", 8)
    cache = compute_feature_cache(tileset, modalities, pool)
    oracle = ground_truth_oracle(tileset)

    results: list[TrialResult] = []
    for trial in range(trials):
        seed = base_seed + trial
        active_split = SplitSpec(balance_train=False, seed=seed)
        train, test = make_split(tileset, active_split)
        train_positives = int((tileset.labels[train] == POSITIVE).sum())

        for name, strategy in strategies.items():
            session = ActiveSession(
                tileset,
                strategy,
                budget=min(budget, len(train)),
                batch_size=batch_size,
                seed=seed,
                candidate_ids=train,
                test_ids=test,
                classifier_params=classifier_params,
                feature_cache=cache,
            )
            session.run(oracle)
            curve = [
                {
                    "labels_used": r["labels_used"],
                    "test_accuracy": r["test_accuracy"],
                    "found_fraction": r["positives_found"] / train_positives
                    if train_positives
                    else 0.0,
                    "positives_found": r["positives_found"],
                }
                for r in session.rounds
            ]
            final = _curve_at(curve, budget)
            results.append(
                TrialResult(
                    strategy_id=name,
                    seed=seed,
                    accuracy=final["test_accuracy"] if final else None,
                    curve=curve,
                    meta={
                        "train_positives": train_positives,
                        "queried_positive_rate": session.queried_positive_rate(),
                    },
                )
            )

        for m in passive_modalities:
            results.append(
                run_passive_trial(
                    tileset,
                    m,
                    seed,
                    classifier_params=classifier_params,
                    split_spec=SplitSpec(balance_train=True, seed=seed),
                    feature_cache=cache,
                )
            )

    aggregates: dict[str, Aggregate] = {}
    for name in strategies:
        per = [t for t in results if t.strategy_id == name]
        mean_acc, sem_acc, mean_found, sem_found = [], [], [], []
        for b in checkpoints:
            at = [_curve_at(t.curve, b) for t in per]
            acc = [a["test_accuracy"] if a else None for a in at]
            found = [a["found_fraction"] if a else None for a in at]
            ma, sa = mean_sem(acc)
            mf, sf = mean_sem(found)
            mean_acc.append(ma)
            sem_acc.append(sa)
            mean_found.append(mf)
            sem_found.append(sf)
        aggregates[name] = Aggregate(
            name, checkpoints, mean_acc, sem_acc, mean_found, sem_found, len(per)
        )

    significance: dict[str, float] = {}
    names = list(strategies)
    final_acc = {
        n: [
            t.accuracy
            for t in results
            if t.strategy_id == n and t.accuracy is not None
        ]
        for n in names
    }
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if len(final_acc[a]) > 1 and len(final_acc[b]) > 1:
                p = stats.ttest_ind(final_acc[a], final_acc[b]).pvalue
                significance[f"{a}|{b}"] = float(p)

    return BenchmarkResult(aggregates, results, significance, checkpoints)


def write_benchmark(result: BenchmarkResult, outdir) -> Path:
    """Persist raw trials (JSONL) plus aggregate and plot-ready CSVs."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "raw_trials.jsonl", "w") as f:
        for t in result.trials:
            f.write(t.to_json() + "\n")
    with open(out / "aggregate.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "budget", "mean_acc", "sem_acc", "mean_found", "sem_found"])
        for agg in result.aggregates.values():
            for i, b in enumerate(agg.budgets):
                w.writerow(
                    [
                        agg.strategy_id,
                        b,
                        agg.mean_accuracy[i],
                        agg.sem_accuracy[i],
                        agg.mean_found[i],
                        agg.sem_found[i],
                    ]
                )
    names = list(result.aggregates)
    with open(out / "curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        header = ["budget"]
        for n in names:
            header += [f"{n}_acc", f"{n}_acc_sem", f"{n}_found", f"{n}_found_sem"]
        w.writerow(header)
        for i, b in enumerate(result.checkpoints):
            row = [b]
            for n in names:
                agg = result.aggregates[n]
                row += [
                    agg.mean_accuracy[i],
                    agg.sem_accuracy[i],
                    agg.mean_found[i],
                    agg.sem_found[i],
                ]
            w.writerow(row)
    if result.significance:
        with open(out / "significance.json", "w") as f:
            json.dump(result.significance, f, indent=2, sort_keys=True)
            f.write("\n")
    return out


@dataclass(frozen=True)
class LabelingTime:
    """Exact labeling duration; rendering rounds to minutes or hours."""

    labels: int
    seconds_per_label: int

    @property
    def seconds(self) -> int:
        return self.labels * self.seconds_per_label

    @property
    def minutes_rounded(self) -> int:
        return round(self.seconds / 60)

    @property
    def hours_rounded(self) -> int:
        return round(self.seconds / 3600)

    def render(self) -> str:
        if self.seconds < 6 * 3600:
            return f"{self.minutes_rounded} mins"
        return f"{self.hours_rounded} hours"


def labeling_time(budget: int, seconds_per_label: int = 30) -> LabelingTime:
    """Annotator time for a label budget at a fixed per-label cost."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    return LabelingTime(int(budget), int(seconds_per_label))
