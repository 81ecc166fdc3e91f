"""Detection merging, k-means clustering, map export."""
from __future__ import annotations

import itertools
import json

import numpy as np
import pytest

import rarequery as rq
from rarequery.mapping import (
    DetectionMap,
    KMeansLloyd,
    build_detection_map,
    detections_to_points,
    elbow_scan,
    export_map,
    kmeans,
    load_map,
    merge_points,
)

from conftest import make_small_site


def exhaustive_best_inertia(points: np.ndarray, k: int) -> float:
    """Minimum inertia over every possible assignment (oracle, <= 8 points)."""
    n = len(points)
    best = np.inf
    for assign in itertools.product(range(k), repeat=n):
        assign = np.asarray(assign)
        inertia = 0.0
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centroid = members.mean(axis=0)
                inertia += float(((members - centroid) ** 2).sum())
        best = min(best, inertia)
    return best


# ---------------- detection merging ----------------


def test_no_detection_above_threshold_gives_empty(small_tileset):
    outputs = np.zeros(len(small_tileset))
    pts, conf = detections_to_points(small_tileset, outputs, threshold=0.5)
    assert len(pts) == 0 and len(conf) == 0


def test_two_points_five_meters_apart_merge_to_midpoint():
    pts, conf = merge_points([(0.0, 0.0), (5.0, 0.0)], [0.8, 0.6], radius=10.0)
    assert pts.shape == (1, 2)
    assert pts[0].tolist() == [2.5, 0.0]
    assert conf[0] == 0.8


def test_merge_is_idempotent():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0, 100, size=(40, 2))
    conf = rng.uniform(0.5, 1.0, size=40)
    pts1, conf1 = merge_points(raw, conf, radius=12.0)
    pts2, conf2 = merge_points(pts1, conf1, radius=12.0)
    assert np.array_equal(pts1, pts2) and np.array_equal(conf1, conf2)
    d = np.hypot(*(pts1[:, None, :] - pts1[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert (d > 12.0).all()


def test_detection_count_tracks_registry_on_accurate_classifier():
    from rarequery.tilestore import WarmBlobParams

    ts, registry = make_small_site(
        seed=31, extent_m=540.0, positives=20, stride_m=5.0,
        blob_params=WarmBlobParams(clutter_per_hectare=0.0, contrast_range=(6.0, 9.0)),
    )
    rq.compute_metric(ts)
    y = (ts.labels == 1).astype(int)
    pos = np.nonzero(y == 1)[0]
    neg = np.random.default_rng(0).choice(np.nonzero(y == 0)[0], size=len(pos), replace=False)
    train = np.concatenate([pos, neg])
    clf = rq.TileNetClassifier(learning_rate=1e-2, init_seed=0,
                               pixel_scale=float(ts.pixels["thermal"].max()))
    clf.fit(ts.pixels["thermal"][train], y[train])
    acc = (clf.predict(ts.pixels["thermal"]) == y).mean()
    assert acc >= 0.9  # classifier quality gate for the count check
    outputs = clf.positive_proba(ts.pixels["thermal"])
    # overlapping crops flag every tile that sees the object, including ones
    # whose square misses its center; one interval of merge radius absorbs them
    pts, _ = detections_to_points(ts, outputs, merge_radius_m=ts.crop.interval_m)
    assert abs(len(pts) - len(registry)) <= 0.2 * len(registry)


# ---------------- k-means ----------------


def test_k1_centroid_is_global_mean():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(15, 2))
    dmap = kmeans(pts, 1, seed=0)
    assert np.allclose(dmap.centroids[0], pts.mean(axis=0))
    assert (dmap.assignment == 0).all()


def test_k_equals_n_gives_zero_inertia():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 50, size=(6, 2))
    model = KMeansLloyd(n_clusters=6, seed=0).fit(pts)
    assert model.inertia_ == pytest.approx(0.0, abs=1e-12)
    assert sorted(model.labels_.tolist()) == list(range(6))


def test_three_separated_blobs_recovered_exactly():
    rng = np.random.default_rng(3)
    blobs = [
        rng.normal((0, 0), 0.5, size=(20, 2)),
        rng.normal((30, 0), 0.5, size=(20, 2)),
        rng.normal((0, 30), 0.5, size=(20, 2)),
    ]
    pts = np.vstack(blobs)
    truth = np.repeat([0, 1, 2], 20)
    model = KMeansLloyd(n_clusters=3, seed=0).fit(pts)
    # cluster indices are arbitrary: require a relabeling-consistent match
    mapping = {}
    for c in range(3):
        mapping[c] = np.bincount(truth[model.labels_ == c]).argmax()
    recovered = np.array([mapping[c] for c in model.labels_])
    assert (recovered == truth).all()


def test_matches_exhaustive_oracle_on_small_instances():
    rng = np.random.default_rng(17)
    for case in range(12):
        n = int(rng.integers(4, 9))
        k = int(rng.integers(1, 4))
        if k > n:
            k = n
        pts = rng.uniform(0, 10, size=(n, 2))
        model = KMeansLloyd(n_clusters=k, seed=case).fit(pts)
        assert model.inertia_ == pytest.approx(exhaustive_best_inertia(pts, k), abs=1e-9)


def test_inertia_history_non_increasing():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 100, size=(200, 2))
    for seed in range(5):
        model = KMeansLloyd(n_clusters=4, n_init=1, seed=seed).fit(pts)
        hist = model.inertia_history_
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
        assert model.n_iter_ <= 300


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(6)
    pts = rng.uniform(0, 10, size=(30, 2))
    a = KMeansLloyd(n_clusters=3, seed=9).fit(pts)
    b = KMeansLloyd(n_clusters=3, seed=9).fit(pts)
    assert np.array_equal(a.cluster_centers_, b.cluster_centers_)
    assert np.array_equal(a.labels_, b.labels_)


def test_centroids_equal_member_means():
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 10, size=(25, 2))
    dmap = kmeans(pts, 4, seed=1)
    dmap.validate()  # centroid-law check lives in validate()


def test_fewer_points_than_clusters_rejected():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 3)


def test_elbow_scan_reports_decreasing_inertia():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 100, size=(60, 2))
    scan = elbow_scan(pts, range(1, 6), seed=0)
    inertias = [v for _, v in scan]
    assert all(b <= a + 1e-9 for a, b in zip(inertias, inertias[1:]))


# ---------------- export ----------------


def test_empty_map_exports_valid_file(tmp_path):
    dmap = DetectionMap(
        points=np.zeros((0, 2)),
        confidences=np.zeros(0),
        assignment=np.zeros(0, dtype=int),
        centroids=np.zeros((0, 2)),
    )
    path = export_map(dmap, tmp_path / "empty.geojson")
    doc = load_map(path)
    assert doc["features"] == []
    assert doc["redacted"] is True


def test_export_round_trip_recovers_coordinates_exactly(tmp_path):
    rng = np.random.default_rng(9)
    pts = rng.uniform(0, 1000, size=(12, 2))
    dmap = build_detection_map(pts, rng.uniform(0.5, 1, 12), k=3, seed=0)
    doc = load_map(export_map(dmap, tmp_path / "m.geojson"))
    got = [
        f["geometry"]["coordinates"]
        for f in doc["features"]
        if f["properties"]["role"] == "detection"
    ]
    assert sorted(map(tuple, got)) == sorted(map(tuple, pts.tolist()))


def test_six_cluster_export_has_six_centroid_features(tmp_path):
    rng = np.random.default_rng(10)
    centers = rng.uniform(0, 2000, size=(6, 2))
    pts = np.vstack([rng.normal(c, 15.0, size=(9, 2)) for c in centers])
    dmap = kmeans(pts, 6, seed=4)
    doc = load_map(export_map(dmap, tmp_path / "six.geojson"))
    stars = [f for f in doc["features"] if f["properties"]["role"] == "cluster_center"]
    assert len(stars) == 6


def test_redaction_omits_origin(tmp_path):
    pts = np.array([[0.0, 0.0], [5.0, 5.0], [100.0, 3.0]])
    dmap = kmeans(pts, 1, seed=0)
    redacted = load_map(export_map(dmap, tmp_path / "r.geojson", redact_landscape=True, origin_xy=(7.7, 8.8)))
    assert redacted["origin_xy"] is None
    open_doc = load_map(export_map(dmap, tmp_path / "o.geojson", redact_landscape=False, origin_xy=(7.7, 8.8)))
    assert open_doc["origin_xy"] == [7.7, 8.8]
