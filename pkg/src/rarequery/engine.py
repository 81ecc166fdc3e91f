"""Active-learning loop: ranked stochastic querying with ensemble weighting.

Each round walks the metric-ranked unlabeled tiles, samples a class from
the (possibly ensemble-weighted) model output per tile, queries the tiles
sampled positive, retrains from the initial weights on a balanced
selection of everything labeled so far, and repeats until the label
budget is exhausted. Four reference baselines (random, uncertainty,
positive-certainty, disagreement) share the training protocol and differ
only in how they pick the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classifier import TileNetClassifier, extract_features
from .ranking import RankingSpec, rank_tiles
from .tilestore import POSITIVE, THERMAL, UNLABELED, Tileset
from .validation import check_random_state

MULTIMODAL_SINGLE = "multimodal_single"
MULTIMODAL_ENSEMBLE = "multimodal_ensemble"
RANDOM = "random"
UNCERTAINTY = "uncertainty"
POSITIVE_CERTAINTY = "positive_certainty"
DISAGREE = "disagree"
STRATEGY_KINDS = (
    MULTIMODAL_SINGLE,
    MULTIMODAL_ENSEMBLE,
    RANDOM,
    UNCERTAINTY,
    POSITIVE_CERTAINTY,
    DISAGREE,
)
_MULTI_MODEL = (MULTIMODAL_ENSEMBLE, DISAGREE)
_RANKED = (MULTIMODAL_SINGLE, MULTIMODAL_ENSEMBLE)

RUN_LOG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Strategy:
    """Query strategy plus which modality each classifier sees."""

    kind: str
    modalities: tuple[str, ...]
    metric_modality: str = THERMAL

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        m = len(self.modalities)
        if self.kind in _MULTI_MODEL:
            if m < 2:
                raise ValueError(f"{self.kind} needs at least 2 classifiers, got {m}")
        elif m != 1:
            raise ValueError(f"{self.kind} needs exactly 1 classifier, got {m}")

    @property
    def n_models(self) -> int:
        return len(self.modalities)

    @classmethod
    def from_cli(cls, kind: str, modalities) -> "Strategy":
        return cls(kind.replace("-", "_"), tuple(modalities))


@dataclass(frozen=True)
class ClassScore:
    """Per-class score for one tile; binary, so the scores sum to 1."""

    score_pos: float

    def __post_init__(self):
        if not -1e-9 <= self.score_pos <= 1 + 1e-9:
            raise ValueError(f"score_pos out of [0, 1]: {self.score_pos}")

    @property
    def score_neg(self) -> float:
        return 1.0 - self.score_pos


def ensemble_score(outputs, weights) -> ClassScore:
    """Weighted sum of the models' positive probabilities."""
    p = np.asarray(outputs, dtype=float)
    w = weights.as_floats() if isinstance(weights, EnsembleWeights) else np.asarray(weights, dtype=float)
    if p.shape != w.shape:
        raise ValueError(f"{len(p)} outputs vs {len(w)} weights")
    if len(p) < 1:
        raise ValueError("need at least one model output")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return ClassScore(float(np.dot(w, p)))


def sample_prediction(score: ClassScore, rng) -> int:
    """Draw a class from the score distribution: 1 with probability score_pos."""
    rng = check_random_state(rng)
    return int(rng.random() < score.score_pos)


@dataclass
class EnsembleWeights:
    """Per-model weights proportional to correct classifications so far.

    Counts are integers and weights exact rationals, so the sum-to-one
    invariant holds exactly. While no model has any correct classification
    the weights stay at their current values (uniform at initialization).
    """

    correct_counts: list[int]
    weights: list[Fraction]

    @classmethod
    def uniform(cls, n_models: int) -> "EnsembleWeights":
        if n_models < 1:
            raise ValueError("need at least one model")
        return cls([0] * n_models, [Fraction(1, n_models)] * n_models)

    def updated(self, correct_counts) -> "EnsembleWeights":
        counts = [int(c) for c in correct_counts]
        if len(counts) != len(self.correct_counts):
            raise ValueError("model count changed")
        if any(c < 0 for c in counts):
            raise ValueError("correct counts must be nonnegative")
        total = sum(counts)
        if total == 0:
            return EnsembleWeights(counts, list(self.weights))
        return EnsembleWeights(counts, [Fraction(c, total) for c in counts])

    def as_floats(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights])

    def check(self) -> None:
        assert sum(self.weights, Fraction(0)) == 1, "weights must sum to 1 exactly"


def update_weights(weights: EnsembleWeights, queried_labels, per_model_predictions) -> EnsembleWeights:
    """Recompute weights from correct counts over all queried instances.

    ``per_model_predictions`` is (M, K) thresholded 0/1 predictions made at
    query time; ``queried_labels`` the K ground labels.
    """
    labels = np.asarray(queried_labels, dtype=int)
    preds = np.atleast_2d(np.asarray(per_model_predictions, dtype=int))
    if preds.shape[1] != len(labels):
        raise ValueError("prediction/label count mismatch")
    counts = (preds == labels[None, :]).sum(axis=1)
    return weights.updated(counts)


def select_training_set(labeled: dict[int, int], rng) -> list[int]:
    """Balanced pick: all positives plus as many random labeled negatives.

    With no positives yet, everything labeled is selected; with fewer
    negatives than positives, all negatives are used.
    """
    if not labeled:
        raise ValueError("labeled set is empty")
    rng = check_random_state(rng)
    pos = [i for i, lab in labeled.items() if lab == 1]
    neg = [i for i, lab in labeled.items() if lab == 0]
    if not pos:
        return pos + neg
    if len(neg) > len(pos):
        picked = rng.choice(len(neg), size=len(pos), replace=False)
        neg = [neg[j] for j in sorted(picked)]
    return pos + neg


def ground_truth_oracle(tileset: Tileset):
    """Labeler that answers from the tileset's ground-truth labels."""

    def oracle(tile_ids):
        out = []
        for i in tile_ids:
            lab = int(tileset.labels[i])
            if lab == UNLABELED:
                raise ValueError(f"tile {i} has no ground-truth label")
            out.append(1 if lab == POSITIVE else 0)
        return out

    return oracle


def compute_feature_cache(tileset: Tileset, modalities, pool_size: int = 8) -> dict:
    """Extract and normalize features once per modality for reuse across sessions."""
    cache = {}
    for m in set(modalities):
        pixels = tileset.require_modality(m)
        scale = float(pixels.max()) if len(pixels) else 1.0
        if scale <= 0:
            scale = 1.0
        cache[m] = (extract_features(pixels, pool_size) / scale, scale)
    return cache


@dataclass
class _PendingBatch:
    ids: list[int]
    model_preds: np.ndarray  # (M, K) thresholded predictions at query time
    walk_length: int | None
    rng_state: dict


DEFAULT_CLASSIFIER_PARAMS = {"learning_rate": 1e-2}


class ActiveSession:
    """One active-learning run over a tileset (or an id subset of one).

    The session owns its label state (it never mutates the tileset) and a
    single seeded random stream that drives class sampling, negative
    subsampling and training shuffles, so a (seed, tileset, strategy)
    triple replays to an identical query sequence and log.
    """

    def __init__(
        self,
        tileset: Tileset,
        strategy: Strategy,
        budget: int,
        batch_size: int = 10,
        seed: int = 0,
        candidate_ids=None,
        test_ids=None,
        classifier_params: dict | None = None,
        ranking_spec: RankingSpec | None = None,
        feature_cache: dict | None = None,
    ):
        if budget < 0:
            raise ValueError("budget must be >= 0")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.tileset = tileset
        self.strategy = strategy
        self.budget = int(budget)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)

        all_ids = np.arange(len(tileset))
        self.candidates = np.asarray(candidate_ids if candidate_ids is not None else all_ids, dtype=int)
        if len(np.unique(self.candidates)) != len(self.candidates):
            raise ValueError("candidate ids must be unique")
        self.test_ids = None if test_ids is None else np.asarray(test_ids, dtype=int)
        if self.budget > len(self.candidates):
            raise ValueError(
                f"budget {budget} exceeds the {len(self.candidates)} candidate tiles"
            )

        params = dict(DEFAULT_CLASSIFIER_PARAMS)
        params.update(classifier_params or {})
        self.classifier_params = params
        pool = params.get("pool_size", 8)

        cache = feature_cache or compute_feature_cache(tileset, strategy.modalities, pool)
        self.features: dict[str, np.ndarray] = {}
        self.pixel_scales: dict[str, float] = {}
        for m in strategy.modalities:
            if m not in cache:
                cache.update(compute_feature_cache(tileset, [m], pool))
            self.features[m], self.pixel_scales[m] = cache[m]

        self.models: list[TileNetClassifier] = []
        for i, m in enumerate(strategy.modalities):
            clf = TileNetClassifier(
                init_seed=(self.seed * 1000003 + i) % 2**31,
                pixel_scale=self.pixel_scales[m],
                **params,
            )
            clf.setup_features(self.features[m].shape[1])
            self.models.append(clf)

        self.weights = EnsembleWeights.uniform(strategy.n_models)

        self._ranked: np.ndarray | None = None
        self._rank_position: dict[int, int] = {}
        self.ranking_spec = ranking_spec or RankingSpec()
        if strategy.kind in _RANKED or tileset.metric_values is not None or THERMAL in tileset.pixels:
            try:
                order = rank_tiles(tileset, self.ranking_spec)
            except KeyError:
                if strategy.kind in _RANKED:
                    raise
                order = None
            if order is not None:
                in_candidates = np.zeros(len(tileset), dtype=bool)
                in_candidates[self.candidates] = True
                self._ranked = order.order[in_candidates[order.order]]
                self._rank_position = {int(t): k for k, t in enumerate(self._ranked)}
        if strategy.kind in _RANKED and self._ranked is None:
            raise ValueError("ranked strategies need a computable ranking metric")

        self.labeled: dict[int, int] = {}
        self.labeled_round: dict[int, int] = {}
        self._model_preds: dict[int, np.ndarray] = {}
        self.rounds: list[dict] = []
        self.done = False
        self._pending: _PendingBatch | None = None

    # ---------------- bookkeeping ----------------

    @property
    def labels_used(self) -> int:
        return len(self.labeled)

    @property
    def remaining_budget(self) -> int:
        return self.budget - self.labels_used

    @property
    def positives_found(self) -> int:
        return sum(self.labeled.values())

    def queried_positive_rate(self) -> float:
        return self.positives_found / self.labels_used if self.labeled else 0.0

    def unlabeled_candidates(self) -> np.ndarray:
        if self._ranked is not None:
            pool = self._ranked
        else:
            pool = self.candidates
        if not self.labeled:
            return pool
        mask = np.ones(len(self.tileset), dtype=bool)
        mask[list(self.labeled)] = False
        return pool[mask[pool]]

    def _probs(self, ids: np.ndarray) -> np.ndarray:
        """(M, K) positive probabilities for the given tile ids."""
        return np.stack(
            [
                model.proba_features(self.features[m][ids])
                for model, m in zip(self.models, self.strategy.modalities)
            ]
        )

    def _combined(self, probs: np.ndarray) -> np.ndarray:
        if self.strategy.n_models == 1:
            return probs[0]
        return self.weights.as_floats() @ probs

    # ---------------- batch assembly ----------------

    def _assemble_ranked(self, b: int):
        """Walk the rank order, sampling a class per tile, until b positives."""
        pool = self.unlabeled_candidates()
        probs = self._probs(pool)
        scores = self._combined(probs)
        picked: list[int] = []
        picked_cols: list[int] = []
        walk = 0
        for k in range(len(pool)):
            walk += 1
            if self.rng.random() < scores[k]:
                picked.append(int(pool[k]))
                picked_cols.append(k)
                if len(picked) == b:
                    break
        if len(picked) < b:  # order exhausted: pad with the best-ranked leftovers
            taken = set(picked)
            for k in range(len(pool)):
                if len(picked) == b:
                    break
                t = int(pool[k])
                if t not in taken:
                    picked.append(t)
                    picked_cols.append(k)
                    taken.add(t)
        preds = (probs[:, picked_cols] >= 0.5).astype(int) if picked else np.zeros((self.strategy.n_models, 0), int)
        return picked, preds, walk

    def _assemble_baseline(self, b: int):
        pool = self.unlabeled_candidates()
        kind = self.strategy.kind
        if kind == RANDOM:
            cols = self.rng.choice(len(pool), size=min(b, len(pool)), replace=False)
            probs = self._probs(pool[cols])
            return [int(t) for t in pool[cols]], (probs >= 0.5).astype(int), None
        probs = self._probs(pool)
        if kind == UNCERTAINTY:
            key = np.abs(probs[0] - 0.5)
        elif kind == POSITIVE_CERTAINTY:
            key = 1.0 - probs[0]
        elif kind == DISAGREE:
            # largest pairwise output difference, generalizing the two-model case
            m = len(probs)
            diff = np.zeros(probs.shape[1])
            for i in range(m):
                for j in range(i + 1, m):
                    np.maximum(diff, np.abs(probs[i] - probs[j]), out=diff)
            key = -diff
        else:  # pragma: no cover
            raise ValueError(f"not a baseline strategy: {kind}")
        cols = np.lexsort((pool, key))[: min(b, len(pool))]
        return [int(t) for t in pool[cols]], (probs[:, cols] >= 0.5).astype(int), None

    def begin_round(self) -> list[int]:
        """Assemble (or re-serve) the batch to be labeled this round."""
        if self._pending is not None:
            return list(self._pending.ids)
        if self.done:
            return []
        b = min(self.batch_size, self.remaining_budget)
        pool = self.unlabeled_candidates()
        if b == 0 or len(pool) == 0:
            self.done = True
            return []
        b = min(b, len(pool))
        rng_state = self.rng.bit_generator.state
        if self.strategy.kind in _RANKED:
            ids, preds, walk = self._assemble_ranked(b)
        else:
            ids, preds, walk = self._assemble_baseline(b)
        self._pending = _PendingBatch(ids, preds, walk, rng_state)
        return list(ids)

    def rollback_round(self) -> None:
        """Undo a begun round (labeler failure), restoring the random stream."""
        if self._pending is not None:
            self.rng.bit_generator.state = self._pending.rng_state
            self._pending = None

    def complete_round(self, labels) -> dict:
        """Record labels for the pending batch, reweight, retrain, and log."""
        if self._pending is None:
            raise RuntimeError("no pending batch; call begin_round first")
        ids = self._pending.ids
        if isinstance(labels, dict):
            if set(labels) != set(ids):
                raise ValueError("labels must cover exactly the pending batch")
            labels = [labels[i] for i in ids]
        labels = [int(v) for v in labels]
        if len(labels) != len(ids):
            raise ValueError(f"{len(ids)} tiles pending, got {len(labels)} labels")
        if any(v not in (0, 1) for v in labels):
            raise ValueError("labels must be 0 or 1")
        if any(i in self.labeled for i in ids):
            raise RuntimeError("pending batch contains an already-labeled tile")

        round_index = len(self.rounds)
        for i, (t, lab) in enumerate(zip(ids, labels)):
            self.labeled[t] = lab
            self.labeled_round[t] = round_index
            self._model_preds[t] = self._pending.model_preds[:, i]

        if self.strategy.n_models > 1:
            queried = list(self.labeled)
            lab_arr = [self.labeled[t] for t in queried]
            pred_arr = np.stack([self._model_preds[t] for t in queried], axis=1)
            self.weights = update_weights(self.weights, lab_arr, pred_arr)
            self.weights.check()

        train_ids = select_training_set(self.labeled, self.rng)
        y = np.array([self.labeled[t] for t in train_ids], dtype=float)
        idx = np.asarray(train_ids, dtype=int)
        for model, m in zip(self.models, self.strategy.modalities):
            model.reset()
            model.train_features(self.features[m][idx], y, rng=self.rng)

        entry = {
            "round": round_index,
            "queried_ids": [int(t) for t in ids],
            "labels": labels,
            "weights": [float(w) for w in self.weights.as_floats()],
            "labels_used": self.labels_used,
            "positives_found": self.positives_found,
            "walk_length": self._pending.walk_length,
            "test_accuracy": self.test_accuracy(),
        }
        self.rounds.append(entry)
        self._pending = None
        if self.remaining_budget == 0 or len(self.unlabeled_candidates()) == 0:
            self.done = True
        return entry

    def run_round(self, labeler) -> dict | None:
        """One full round; a labeler failure leaves the session untouched."""
        ids = self.begin_round()
        if not ids:
            return None
        try:
            labels = labeler(ids)
        except Exception:
            self.rollback_round()
            raise
        return self.complete_round(labels)

    def run(self, labeler, max_rounds: int | None = None) -> "ActiveSession":
        rounds = 0
        while not self.done and (max_rounds is None or rounds < max_rounds):
            if self.run_round(labeler) is None:
                break
            rounds += 1
        return self

    # ---------------- evaluation & export ----------------

    def predict_scores(self, ids) -> np.ndarray:
        """Combined (ensemble-weighted) positive score for arbitrary tiles."""
        ids = np.asarray(ids, dtype=int)
        return self._combined(self._probs(ids))

    def test_accuracy(self) -> float | None:
        if self.test_ids is None or len(self.test_ids) == 0:
            return None
        truth = self.tileset.labels[self.test_ids]
        if (truth == UNLABELED).any():
            raise ValueError("test tiles must carry ground-truth labels")
        pred = self.predict_scores(self.test_ids) >= 0.5
        return float((pred == (truth == POSITIVE)).mean())

    def rank_position(self, tile_id: int) -> int | None:
        return self._rank_position.get(int(tile_id))

    def metric_value(self, tile_id: int) -> float | None:
        mv = self.tileset.metric_values
        return None if mv is None else float(mv[int(tile_id)])

    def to_run_log(self) -> dict:
        return {
            "schema_version": RUN_LOG_SCHEMA_VERSION,
            "strategy": self.strategy.kind,
            "modalities": list(self.strategy.modalities),
            "metric_modality": self.strategy.metric_modality,
            "seed": self.seed,
            "budget": self.budget,
            "batch_size": self.batch_size,
            "n_candidates": int(len(self.candidates)),
            "tileset_provenance": self.tileset.provenance,
            "rounds": self.rounds,
            "final": {
                "labels_used": self.labels_used,
                "positives_found": self.positives_found,
                "queried_positive_rate": self.queried_positive_rate(),
                "weights": [float(w) for w in self.weights.as_floats()],
                "done": self.done,
            },
        }


def render_run_log(session: ActiveSession) -> str:
    """Canonical one-line-stable JSON for run logs (shared by CLI and service)."""
    return json.dumps(session.to_run_log(), sort_keys=True, separators=(",", ":")) + "\n"
