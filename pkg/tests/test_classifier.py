"""Classifier numerics: loss values, gradients, training and resets."""
from __future__ import annotations

import numpy as np
import pytest

from rarequery.classifier import TileNetClassifier, bce_loss, extract_features


def central_difference(clf: TileNetClassifier, F, y, eps=1e-6) -> np.ndarray:
    """Independent finite-difference gradient of the mean-BCE objective."""
    base = clf.state_.params.copy()
    grad = np.zeros_like(base)
    for i in range(len(base)):
        for sign in (1.0, -1.0):
            clf.state_.params = base.copy()
            clf.state_.params[i] += sign * eps
            p = clf.proba_features(F)
            grad[i] += sign * bce_loss(p, y)
    clf.state_.params = base
    return grad / (2 * eps)


def toy_features(rng, n=6, d=10):
    return rng.normal(0.0, 1.0, size=(n, d))


def fresh(d=10, hidden=8, seed=0, lr=0.05, epochs=10) -> TileNetClassifier:
    clf = TileNetClassifier(
        hidden_width=hidden, learning_rate=lr, epochs=epochs, batch_size=4, init_seed=seed
    )
    return clf.setup_features(d)


# ---------------- loss ----------------


def test_bce_at_half_is_ln2():
    assert bce_loss([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2), abs=1e-12)


def test_bce_perfect_prediction_near_zero():
    assert bce_loss([1.0, 0.0], [1, 0]) == pytest.approx(0.0, abs=1e-6)


def test_bce_hand_computed_example():
    expect = np.mean([-np.log(0.9), -np.log(0.8)])
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.1643, abs=5e-5)


def test_bce_length_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        bce_loss([0.5, 0.5], [1])


# ---------------- fresh state ----------------


def test_fresh_classifier_outputs_exactly_half():
    rng = np.random.default_rng(0)
    for hidden in (0, 8, 32):
        clf = fresh(hidden=hidden)
        p = clf.proba_features(toy_features(rng))
        assert (p == 0.5).all()


def test_prediction_probability_range():
    rng = np.random.default_rng(1)
    clf = fresh()
    clf.state_.params = rng.normal(0, 10.0, size=clf.state_.params.shape)
    p = clf.proba_features(rng.normal(0, 5, size=(50, 10)))
    assert ((p >= 0.0) & (p <= 1.0)).all()


# ---------------- gradients ----------------


@pytest.mark.parametrize("hidden", [0, 8])
def test_gradient_matches_central_differences(hidden):
    rng = np.random.default_rng(42)
    for case in range(20):
        clf = fresh(hidden=hidden, seed=case)
        clf.state_.params = clf.state_.params + rng.normal(0, 0.3, clf.state_.params.shape)
        F = toy_features(rng)
        y = rng.integers(0, 2, size=len(F)).astype(float)
        analytic = clf.gradient_features(F, y)
        numeric = central_difference(clf, F, y)
        denom = max(np.linalg.norm(numeric), 1e-8)
        assert np.linalg.norm(analytic - numeric) / denom < 1e-4


def test_gradient_of_duplicated_batch_equals_single():
    rng = np.random.default_rng(7)
    clf = fresh()
    clf.state_.params = rng.normal(0, 0.2, clf.state_.params.shape)
    F = toy_features(rng, n=4)
    y = np.array([1.0, 0.0, 1.0, 1.0])
    g1 = clf.gradient_features(F, y)
    g2 = clf.gradient_features(np.vstack([F, F]), np.concatenate([y, y]))
    assert np.allclose(g1, g2, atol=1e-12)


def test_zero_gradient_at_saturated_optimum():
    # logistic mode driven far into the clamp on a separable pair
    clf = fresh(d=1, hidden=0)
    clf.state_.params = np.array([60.0, 0.0])
    F = np.array([[1.0], [-1.0]])
    y = np.array([1.0, 0.0])
    assert np.allclose(clf.gradient_features(F, y), 0.0)


def test_gradient_empty_batch_rejected():
    clf = fresh()
    with pytest.raises(ValueError, match="nonempty"):
        clf.gradient_features(np.zeros((0, 10)), np.zeros(0))


# ---------------- training ----------------


def test_single_positive_drives_probability_toward_one():
    clf = fresh(d=4, lr=0.1, epochs=1)
    F = np.array([[1.0, 0.5, -0.2, 0.3]])
    y = np.array([1.0])
    probs = [float(clf.proba_features(F)[0])]
    rng = np.random.default_rng(0)
    for _ in range(30):
        clf.train_features(F, y, rng=rng)
        probs.append(float(clf.proba_features(F)[0]))
    assert all(b >= a - 1e-12 for a, b in zip(probs, probs[1:]))
    assert probs[-1] > 0.99


def test_two_tile_separable_set_reaches_full_accuracy():
    X = np.zeros((2, 8, 8, 1), dtype=np.float32)
    X[0] += 1.0
    X[1, 0, 0, 0] = 6.0  # bright spike marks the positive
    y = np.array([0, 1])
    clf = TileNetClassifier(learning_rate=0.05, epochs=10, batch_size=2, init_seed=1)
    clf.fit(X, y)
    assert (clf.predict(X) == y).all()
    # trained to convergence the pair is fully separated
    converged = TileNetClassifier(learning_rate=0.05, epochs=200, batch_size=2, init_seed=1)
    converged.fit(X, y)
    p = converged.positive_proba(X)
    assert p[1] > 0.99 and p[0] < 0.01


def test_training_reduces_loss_on_separable_set():
    rng = np.random.default_rng(2)
    F = np.vstack([rng.normal(2.0, 0.3, size=(10, 5)), rng.normal(-2.0, 0.3, size=(10, 5))])
    y = np.array([1.0] * 10 + [0.0] * 10)
    clf = fresh(d=5, lr=0.05)
    before = clf.loss_features(F, y)
    clf.train_features(F, y, rng=np.random.default_rng(0))
    assert clf.loss_features(F, y) <= before


def test_empty_training_set_rejected():
    clf = fresh()
    with pytest.raises(ValueError, match="empty"):
        clf.train_features(np.zeros((0, 10)), np.zeros(0))
    with pytest.raises(ValueError, match="empty"):
        TileNetClassifier().fit(np.zeros((0, 4, 4, 1)), np.zeros(0))


def test_training_deterministic_given_seeds():
    rng = np.random.default_rng(5)
    F = rng.normal(size=(12, 6))
    y = (rng.random(12) > 0.5).astype(float)

    def trained():
        clf = fresh(d=6, seed=3)
        clf.train_features(F, y, rng=np.random.default_rng(11))
        return clf.state_.params

    assert np.array_equal(trained(), trained())


def test_full_batch_gradient_descent_monotone_loss():
    # convex case: logistic-regression mode, explicit descent steps
    rng = np.random.default_rng(9)
    F = rng.normal(size=(20, 4))
    y = (F[:, 0] > 0).astype(float)
    clf = fresh(d=4, hidden=0)
    lr = 0.05
    losses = [clf.loss_features(F, y)]
    for _ in range(50):
        g = clf.gradient_features(F, y)
        clf.state_.params = clf.state_.params - lr * g
        losses.append(clf.loss_features(F, y))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_nan_loss_aborts_with_step_index():
    clf = fresh(d=2, hidden=0)
    clf.state_.params = np.array([np.nan, 0.0, 0.0])
    with pytest.raises(RuntimeError, match="step"):
        clf.train_features(np.array([[1.0, 0.0]]), np.array([1.0]))


# ---------------- reset ----------------


def test_reset_restores_fresh_predictions_bit_exact():
    rng = np.random.default_rng(3)
    F = rng.normal(size=(15, 10))
    y = (rng.random(15) > 0.7).astype(float)
    clf = fresh()
    fresh_pred = clf.proba_features(F).copy()
    snapshot_before = clf.state_.initial_snapshot.copy()
    clf.train_features(F, y, rng=np.random.default_rng(0))
    assert not np.array_equal(clf.proba_features(F), fresh_pred)
    clf.reset()
    assert np.array_equal(clf.proba_features(F), fresh_pred)
    assert np.array_equal(clf.state_.initial_snapshot, snapshot_before)
    assert clf.state_.step == 0
    assert (clf.state_.adam_m == 0).all() and (clf.state_.adam_v == 0).all()


def test_reset_idempotent():
    clf = fresh()
    clf.train_features(np.ones((2, 10)), np.array([1.0, 0.0]), rng=np.random.default_rng(0))
    clf.reset()
    once = clf.state_.params.copy()
    clf.reset()
    assert np.array_equal(once, clf.state_.params)


def test_initial_snapshot_immutable():
    clf = fresh()
    with pytest.raises((ValueError, RuntimeError)):
        clf.state_.initial_snapshot[0] = 99.0


# ---------------- features & estimator surface ----------------


def test_feature_extraction_shapes_and_stats():
    X = np.zeros((2, 16, 16, 1), dtype=np.float32)
    X[1, 3, 4, 0] = 8.0
    F = extract_features(X, pool_size=8)
    assert F.shape == (2, 68)
    assert F[0].max() == 0.0
    n_px = 16 * 16
    assert F[1, 64] == pytest.approx(8.0)  # max
    assert F[1, 65] == pytest.approx(8.0 / n_px)  # mean
    assert F[1, 67] == pytest.approx(8.0 - 8.0 / n_px)  # max - mean


def test_feature_scaling_is_homogeneous():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 7, size=(3, 12, 12, 1)).astype(np.float32)
    F = extract_features(X)
    F_scaled = extract_features((X / 7.0).astype(np.float32))
    assert np.allclose(F / 7.0, F_scaled, atol=1e-6)


def test_uneven_pooling_partitions_cover_tile():
    X = np.ones((1, 20, 20, 1), dtype=np.float32)
    F = extract_features(X, pool_size=8)
    assert np.allclose(F[0, :64], 1.0)


def test_predict_proba_columns_sum_to_one():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 3, size=(6, 8, 8, 1)).astype(np.float32)
    clf = TileNetClassifier(learning_rate=0.05, init_seed=0)
    clf.fit(X, (rng.random(6) > 0.5).astype(int))
    proba = clf.predict_proba(X)
    assert proba.shape == (6, 2)
    assert np.allclose(proba.sum(axis=1), 1.0)


def test_get_params_round_trip():
    clf = TileNetClassifier(hidden_width=16, learning_rate=0.01)
    params = clf.get_params()
    assert params["hidden_width"] == 16
    clone = TileNetClassifier(**params)
    assert clone.get_params() == params


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 5, size=(10, 8, 8, 1)).astype(np.float32)
    y = (rng.random(10) > 0.5).astype(int)
    clf = TileNetClassifier(learning_rate=0.05, init_seed=2)
    clf.fit(X, y)
    clf.save(tmp_path / "model.rqcl", extra={"modality": "thermal"})
    loaded = TileNetClassifier.load(tmp_path / "model.rqcl")
    assert loaded.extra_meta_ == {"modality": "thermal"}
    assert np.allclose(loaded.positive_proba(X), clf.positive_proba(X), atol=1e-5)
