"""Metric-based tile ranking and the conditional-positive diagnostic curve.

Tiles are ordered by how close an informative per-tile metric (by default
the maximum thermal pixel value, MPV) comes to a target value that
characterizes positives (by default the dataset-wide maximum), so the
front of the order is enriched in rare positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .tilestore import THERMAL, POSITIVE, UNLABELED, Tileset

MAX_THERMAL_PIXEL = "max_thermal_pixel"
DATASET_MAX = "dataset_max"


@dataclass(frozen=True)
class RankingSpec:
    """Which metric to rank on and which target value to rank toward."""

    metric: str = MAX_THERMAL_PIXEL
    target: float | str = DATASET_MAX
    custom_fn: Callable[[Tileset], np.ndarray] | None = None

    def __post_init__(self):
        if self.metric not in (MAX_THERMAL_PIXEL, "custom"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "custom" and self.custom_fn is None:
            raise ValueError("custom metric requires custom_fn")


@dataclass
class RankOrder:
    """Tile ids sorted by ascending distance to the target, ties by id."""

    order: np.ndarray
    metric_values: np.ndarray
    target: float
    tie_break: str = "tile_id"

    def __len__(self) -> int:
        return len(self.order)

    def distances(self) -> np.ndarray:
        return np.abs(self.metric_values[self.order] - self.target)


def compute_metric(tileset: Tileset, spec: RankingSpec = RankingSpec()) -> np.ndarray:
    """Evaluate the metric for every tile and record it on the tileset."""
    if spec.metric == MAX_THERMAL_PIXEL:
        thermal = tileset.require_modality(THERMAL)
        n = len(tileset)
        values = thermal.reshape(n, -1).max(axis=1) if n else np.zeros(0, dtype=np.float32)
    else:
        values = np.asarray(spec.custom_fn(tileset), dtype=np.float32)
        if values.shape != (len(tileset),):
            raise ValueError("custom metric must return one value per tile")
    tileset.metric_values = values.astype(np.float32)
    return tileset.metric_values


def resolve_target(metric_values: np.ndarray, target) -> float:
    if isinstance(target, str):
        if target != DATASET_MAX:
            raise ValueError(f"unresolvable target {target!r}")
        if len(metric_values) == 0:
            raise ValueError("cannot resolve dataset_max on an empty tileset")
        return float(metric_values.max())
    return float(target)


def rank_tiles(tileset: Tileset, spec: RankingSpec = RankingSpec()) -> RankOrder:
    """Sort tiles by |metric - target| ascending; equal distances by tile id."""
    values = tileset.metric_values
    if values is None:
        values = compute_metric(tileset, spec)
    target = resolve_target(values, spec.target)
    dist = np.abs(values.astype(float) - target)
    order = np.lexsort((np.arange(len(dist)), dist))
    return RankOrder(order=order, metric_values=values, target=target)


@dataclass
class CurvePoint:
    threshold: float
    probability: float  # P(positive | metric >= threshold)
    n_at_least: int
    positives_at_least: int


@dataclass
class PositiveCurve:
    points: list[CurvePoint]
    omitted_thresholds: list[float]
    base_rate: float
    notes: list[str] = field(default_factory=list)


def bayes_positive_curve(tileset: Tileset, thresholds=None) -> PositiveCurve:
    """P(positive | MPV >= t) over a threshold grid, from label counts.

    Each point is computed two ways: the factored form
    m_t * P(positive) / (m * P(MPV >= t)) and the direct conditional
    frequency m_t / |{MPV >= t}|. The two are compared in exact rational
    arithmetic and must agree; thresholds no tile reaches are omitted with
    a note. Requires a fully labeled tileset (a ground-truth diagnostic).
    """
    if len(tileset) == 0:
        raise ValueError("tileset is empty")
    if (tileset.labels == UNLABELED).any():
        raise ValueError("diagnostic curve requires a fully labeled tileset")
    values = tileset.metric_values
    if values is None:
        values = compute_metric(tileset)
    values = values.astype(float)
    positive = tileset.labels == POSITIVE

    n_total = len(tileset)
    m_total = int(positive.sum())
    if thresholds is None:
        thresholds = np.quantile(values, np.linspace(0.0, 1.0, 50))

    points: list[CurvePoint] = []
    omitted: list[float] = []
    notes: list[str] = []
    for t in np.asarray(thresholds, dtype=float):
        at_least = values >= t
        n_ge = int(at_least.sum())
        if n_ge == 0:
            omitted.append(float(t))
            notes.append(f"threshold {t!r}: no tile reaches it; point omitted")
            continue
        m_t = int((at_least & positive).sum())
        direct = Fraction(m_t, n_ge)
        if m_total > 0:
            factored = (
                Fraction(m_t) * Fraction(m_total, n_total)
            ) / (Fraction(m_total) * Fraction(n_ge, n_total))
            if factored != direct:  # pragma: no cover - algebraic identity
                raise AssertionError(
                    f"conditional-probability forms disagree at t={t}: "
                    f"{factored} vs {direct}"
                )
        points.append(CurvePoint(float(t), float(direct), n_ge, m_t))
    return PositiveCurve(
        points=points,
        omitted_thresholds=omitted,
        base_rate=m_total / n_total,
        notes=notes,
    )
