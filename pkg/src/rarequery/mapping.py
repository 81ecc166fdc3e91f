"""From positive-classified tiles to a clustered object map.

Overlapping crops multiply detections of one object, so nearby positive
tile centers are merged; the merged points are clustered with seeded
k-means and exported as a GeoJSON-style feature collection that can omit
all landscape references for location-sensitive targets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin

from .tilestore import Tileset
from .validation import check_random_state

MAP_SCHEMA_VERSION = 1


def detections_to_points(
    tileset: Tileset,
    classifier_outputs,
    threshold: float = 0.5,
    merge_radius_m: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Tile centers scoring at or above threshold, merged within a radius.

    Points closer than ``merge_radius_m`` (default twice the crop stride)
    collapse to their mean position with the maximum member confidence;
    merging repeats until no two survivors are within the radius, so
    applying it again changes nothing.
    """
    p = np.asarray(classifier_outputs, dtype=float)
    if p.shape != (len(tileset),):
        raise ValueError("need one classifier output per tile")
    if merge_radius_m is None:
        merge_radius_m = 2.0 * tileset.crop.stride_m
    hot = p >= threshold
    return merge_points(tileset.centers[hot], p[hot], merge_radius_m)


def merge_points(points, confidences, radius: float) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    conf = np.asarray(confidences, dtype=float).reshape(-1)
    while True:
        merged_pts, merged_conf = _merge_pass(pts, conf, radius)
        if len(merged_pts) == len(pts):
            return merged_pts, merged_conf
        pts, conf = merged_pts, merged_conf


def _merge_pass(pts: np.ndarray, conf: np.ndarray, radius: float):
    if len(pts) == 0:
        return pts, conf
    order = np.lexsort((pts[:, 1], pts[:, 0], -conf))
    taken = np.zeros(len(pts), dtype=bool)
    out_pts, out_conf = [], []
    for i in order:
        if taken[i]:
            continue
        d = np.hypot(pts[:, 0] - pts[i, 0], pts[:, 1] - pts[i, 1])
        group = np.nonzero(~taken & (d <= radius))[0]
        taken[group] = True
        out_pts.append(pts[group].mean(axis=0))
        out_conf.append(conf[group].max())
    return np.asarray(out_pts), np.asarray(out_conf)


def _plus_plus_init(X: np.ndarray, k: int, rng) -> np.ndarray:
    """Spread-seeking seeding: squared-distance-proportional draws."""
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            centers[c] = X[rng.integers(n)]
            continue
        centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int):
    k = len(centers)
    centers = centers.copy()
    assign = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = cdist(X, centers, "sqeuclidean")
        new_assign = d2.argmin(axis=1)  # ties go to the lowest cluster index
        for c in range(k):  # re-seed empty clusters at the worst-served point
            if not (new_assign == c).any():
                far = d2[np.arange(len(X)), new_assign].argmax()
                centers[c] = X[far]
                new_assign[far] = c
        inertia = float(((X - centers[new_assign]) ** 2).sum())
        history.append(inertia)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = X[assign == c].mean(axis=0)
    else:
        assign = new_assign
    for c in range(k):
        members = X[assign == c]
        if len(members):
            centers[c] = members.mean(axis=0)
    inertia = float(((X - centers[assign]) ** 2).sum())
    if not history or inertia < history[-1]:
        history.append(inertia)
    return centers, assign, inertia, history


class KMeansLloyd(BaseEstimator, ClusterMixin):
    """Seeded Lloyd iterations from spread-probability init, best of n_init.

    Fitting exposes ``cluster_centers_``, ``labels_``, ``inertia_``,
    ``inertia_history_`` (of the winning run, non-increasing) and
    ``n_iter_``.
    """

    def __init__(self, n_clusters: int = 6, n_init: int = 10, max_iter: int = 300, seed: int = 0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float).reshape(-1, 2) if np.ndim(X) <= 2 else np.asarray(X, dtype=float)
        k = self.n_clusters
        if k < 1:
            raise ValueError("n_clusters must be >= 1")
        if len(X) < k:
            raise ValueError(f"{len(X)} points cannot form {k} clusters")
        rng = check_random_state(self.seed)
        best = None
        for _ in range(max(1, self.n_init)):
            centers = _plus_plus_init(X, k, rng)
            res = _lloyd(X, centers, self.max_iter)
            if best is None or res[2] < best[2]:
                best = res
        centers, assign, inertia, history = best
        self.cluster_centers_ = centers
        self.labels_ = assign
        self.inertia_ = inertia
        self.inertia_history_ = history
        self.n_iter_ = len(history)
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


@dataclass
class DetectionMap:
    """Detected points with confidences plus their cluster structure."""

    points: np.ndarray
    confidences: np.ndarray
    assignment: np.ndarray
    centroids: np.ndarray

    @property
    def k(self) -> int:
        return len(self.centroids)

    def validate(self) -> None:
        if len(self.points) != len(self.assignment):
            raise ValueError("every point needs exactly one cluster assignment")
        for c in range(self.k):
            members = self.points[self.assignment == c]
            if len(members) and not np.allclose(
                self.centroids[c], members.mean(axis=0), atol=1e-9
            ):
                raise ValueError(f"centroid {c} is not its members' mean")


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> DetectionMap:
    """Cluster points into k groups; rejects k larger than the point count."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    model = KMeansLloyd(n_clusters=k, n_init=n_init, max_iter=max_iter, seed=seed).fit(pts)
    return DetectionMap(
        points=pts,
        confidences=np.ones(len(pts)),
        assignment=model.labels_,
        centroids=model.cluster_centers_,
    )


def build_detection_map(points, confidences, k: int, seed: int = 0) -> DetectionMap:
    dmap = kmeans(points, k, seed=seed)
    dmap.confidences = np.asarray(confidences, dtype=float).reshape(-1)
    if len(dmap.confidences) != len(dmap.points):
        raise ValueError("one confidence per point")
    return dmap


def elbow_scan(points, k_range, seed: int = 0) -> list[tuple[int, float]]:
    """Inertia per candidate k, for picking a cluster count per site."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = []
    for k in k_range:
        if k < 1 or k > len(pts):
            continue
        out.append((k, KMeansLloyd(n_clusters=k, seed=seed).fit(pts).inertia_))
    return out


def _hull_ring(members: np.ndarray):
    if len(members) < 3:
        return None
    try:
        hull = ConvexHull(members)
    except QhullError:  # collinear members have no 2-D hull
        return None
    ring = members[hull.vertices].tolist()
    ring.append(ring[0])
    return ring


def export_map(dmap: DetectionMap, path, redact_landscape: bool = True, origin_xy=None) -> Path:
    """Write the map as a GeoJSON-style feature collection.

    With ``redact_landscape`` (the default) no world origin or basemap
    reference is written: coordinates stay in unanchored local meters so
    the file cannot be georeferenced against sensitive sites.
    """
    dmap.validate()
    features = []
    for i in range(len(dmap.points)):
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": list(map(float, dmap.points[i]))},
                "properties": {
                    "role": "detection",
                    "confidence": float(dmap.confidences[i]),
                    "cluster": int(dmap.assignment[i]),
                },
            }
        )
    for c in range(dmap.k):
        size = int((dmap.assignment == c).sum())
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": list(map(float, dmap.centroids[c]))},
                "properties": {"role": "cluster_center", "cluster": c, "size": size},
            }
        )
        ring = _hull_ring(dmap.points[dmap.assignment == c])
        if ring is not None:
            features.append(
                {
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                    "properties": {"role": "cluster_hull", "cluster": c},
                }
            )
    doc = {
        "type": "FeatureCollection",
        "schema_version": MAP_SCHEMA_VERSION,
        "redacted": bool(redact_landscape),
        "origin_xy": None if redact_landscape else (list(origin_xy) if origin_xy else [0.0, 0.0]),
        "coordinate_unit": "local_meters",
        "features": features,
    }
    path = Path(path)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_map(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: not a feature collection")
    return doc
