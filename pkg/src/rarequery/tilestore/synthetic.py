"""Deterministic synthetic multimodal sites.

Stands in for private field data: a smooth thermal background with warm
Gaussian blobs at positive-object centers plus cooler false-warm clutter,
brown patches in RGB, and low wide bumps in LiDAR with tall narrow
"termite mound" distractors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (
    BASE_MODALITIES,
    LIDAR,
    RGB,
    THERMAL,
    CropGeometry,
    MiddenRegistry,
    Orthomosaic,
    grid_positions_per_axis,
)

DEFAULT_RESOLUTIONS = {THERMAL: 0.5, RGB: 0.5, LIDAR: 0.5}


@dataclass(frozen=True)
class WarmBlobParams:
    """Tunables for how positives and distractors are painted."""

    sigma_m: float = 2.0
    contrast_range: tuple[float, float] = (4.0, 9.0)
    clutter_per_hectare: float = 0.7
    clutter_contrast_range: tuple[float, float] = (1.0, 6.5)
    # false-warm clutter is hot but narrow: rankable like a positive, yet
    # separable from the wide warm footprint of a real object
    clutter_sigma_m: float = 0.7
    background_level: float = 12.0
    background_noise: float = 1.0
    background_feature_m: float = 40.0
    rgb_patch_radius_m: float = 2.0
    lidar_bump_height: float = 0.35
    mound_height_range: tuple[float, float] = (1.2, 2.5)
    mound_sigma_m: float = 0.8
    mound_per_hectare: float = 0.15


def _smooth_noise(rng, shape, feature_px: float, std: float) -> np.ndarray:
    raw = rng.standard_normal(shape).astype(np.float32)
    sm = gaussian_filter(raw, sigma=max(feature_px / 4.0, 1.0))
    s = sm.std()
    if s > 0:
        sm *= np.float32(std / s)
    return sm


def _paint_gaussian(img: np.ndarray, cx_px: float, cy_px: float, amp: float, sigma_px: float):
    h, w = img.shape[:2]
    r = int(np.ceil(4.0 * sigma_px))
    x0, x1 = max(0, int(cx_px) - r), min(w, int(cx_px) + r + 1)
    y0, y1 = max(0, int(cy_px) - r), min(h, int(cy_px) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return
    yy = np.arange(y0, y1, dtype=np.float32)[:, None]
    xx = np.arange(x0, x1, dtype=np.float32)[None, :]
    g = np.exp(-((yy - cy_px) ** 2 + (xx - cx_px) ** 2) / (2.0 * sigma_px**2))
    if img.ndim == 2:
        img[y0:y1, x0:x1] += np.float32(amp) * g
    else:
        img[y0:y1, x0:x1] += np.float32(amp) * g[:, :, None]


def _blend_patch(img: np.ndarray, cx_px, cy_px, radius_px: float, color, strength: float = 0.9):
    h, w = img.shape[:2]
    r = int(np.ceil(2.5 * radius_px))
    x0, x1 = max(0, int(cx_px) - r), min(w, int(cx_px) + r + 1)
    y0, y1 = max(0, int(cy_px) - r), min(h, int(cy_px) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return
    yy = np.arange(y0, y1, dtype=np.float32)[:, None]
    xx = np.arange(x0, x1, dtype=np.float32)[None, :]
    g = np.exp(-((yy - cy_px) ** 2 + (xx - cx_px) ** 2) / (2.0 * radius_px**2))
    a = (np.float32(strength) * g)[:, :, None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - a) + a * np.asarray(color, dtype=np.float32)


def _scatter(rng, count: int, low: float, high: float) -> np.ndarray:
    return rng.uniform(low, high, size=(count, 2))


def _place_separated(
    rng, count: int, low: float, high: float, min_dist: float,
    accept=None, max_tries: int = 20000,
):
    """Rejection-sample ``count`` points pairwise at least ``min_dist`` apart."""
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < count:
        tries += 1
        if tries > max_tries:
            raise ValueError(
                f"could not place {count} separated points in "
                f"[{low}, {high}]^2 with spacing {min_dist}"
            )
        cand = rng.uniform(low, high, size=2)
        if accept is not None and not accept(cand):
            continue
        if all(np.hypot(*(cand - p)) >= min_dist for p in pts):
            pts.append(cand)
    return np.array(pts) if pts else np.zeros((0, 2))


def generate_synthetic_site(
    seed: int,
    extent_m: float,
    positive_count: int,
    imbalance_target: float = 0.01,
    blob_params: WarmBlobParams | None = None,
    modalities=BASE_MODALITIES,
    resolutions: dict[str, float] | None = None,
    geometry: CropGeometry | None = None,
    min_separation_m: float = 30.0,
    grid_margin_m: float = 4.0,
) -> tuple[dict[str, Orthomosaic], MiddenRegistry]:
    """Generate per-modality orthomosaics and the positive-center registry.

    Bit-identical for a given seed and argument set. ``geometry`` (default
    20 m interval, 20 m stride) is only used to check that the eventual
    crop grid can satisfy ``imbalance_target``; cropping itself happens
    separately. Positive centers keep ``grid_margin_m`` away from the
    interval grid lines so every object owns one well-framed tile instead
    of straddling a tile boundary (overlapping crops get this for free;
    non-overlapping benchmark crops need it from placement).
    """
    if positive_count < 0:
        raise ValueError("positive_count must be >= 0")
    p = blob_params or WarmBlobParams()
    geometry = geometry or CropGeometry(20.0, 20.0)
    res = dict(DEFAULT_RESOLUTIONS)
    if resolutions:
        res.update(resolutions)
    modalities = tuple(m for m in BASE_MODALITIES if m in modalities)
    if not modalities:
        raise ValueError("no known modalities requested")

    per_axis = grid_positions_per_axis(extent_m, geometry.interval_m, geometry.stride_m)
    n_tiles = per_axis * per_axis
    if positive_count > 0:
        needed = int(np.ceil(positive_count / imbalance_target))
        if n_tiles < needed:
            achievable = int(np.floor(n_tiles * imbalance_target))
            raise ValueError(
                f"extent {extent_m} m yields only {n_tiles} tiles; at target "
                f"imbalance {imbalance_target} at most {achievable} positives fit"
            )

    rng = np.random.default_rng(seed)
    hectares = (extent_m / 100.0) ** 2

    margin = max(geometry.interval_m, 4.0 * p.sigma_m)
    if positive_count > 0 and extent_m <= 2 * margin:
        raise ValueError("extent too small to place positives away from the border")
    interval = geometry.interval_m
    if not 0 <= grid_margin_m < interval / 2:
        raise ValueError("grid_margin_m must lie in [0, interval/2)")

    def off_grid_lines(pt) -> bool:
        frac = pt % interval
        return bool(np.all((frac >= grid_margin_m) & (frac <= interval - grid_margin_m)))

    centers = (
        _place_separated(
            rng, positive_count, margin, extent_m - margin, min_separation_m,
            accept=off_grid_lines if grid_margin_m else None,
        )
        if positive_count
        else np.zeros((0, 2))
    )
    registry = MiddenRegistry(centers)

    n_clutter = int(round(p.clutter_per_hectare * hectares))
    clutter = _scatter(rng, n_clutter, margin / 2.0, extent_m - margin / 2.0)
    clutter_amp = rng.uniform(*p.clutter_contrast_range, size=n_clutter)
    pos_amp = rng.uniform(*p.contrast_range, size=positive_count)

    mosaics: dict[str, Orthomosaic] = {}

    if THERMAL in modalities:
        r = res[THERMAL]
        side = int(round(extent_m / r))
        img = np.full((side, side), p.background_level, dtype=np.float32)
        img += _smooth_noise(rng, (side, side), p.background_feature_m / r, p.background_noise)
        sigma_px = p.sigma_m / r
        clutter_sigma_px = p.clutter_sigma_m / r
        for (cx, cy), amp in zip(clutter, clutter_amp):
            _paint_gaussian(img, cx / r, cy / r, amp, clutter_sigma_px)
        for (cx, cy), amp in zip(centers, pos_amp):
            _paint_gaussian(img, cx / r, cy / r, amp, sigma_px)
        mosaics[THERMAL] = Orthomosaic(THERMAL, r, img)

    if RGB in modalities:
        r = res[RGB]
        side = int(round(extent_m / r))
        base = np.array([0.32, 0.42, 0.28], dtype=np.float32)
        img = np.empty((side, side, 3), dtype=np.float32)
        for c in range(3):
            img[:, :, c] = base[c] + _smooth_noise(
                rng, (side, side), p.background_feature_m / r, 0.04
            )
        img += rng.normal(0.0, 0.015, size=img.shape).astype(np.float32)
        brown = np.array([0.42, 0.30, 0.18], dtype=np.float32)
        radius_px = p.rgb_patch_radius_m / r
        # color clutter: bare-soil patches that mimic the positive hue
        n_soil = int(round(0.5 * p.clutter_per_hectare * hectares))
        soil = _scatter(rng, n_soil, margin / 2.0, extent_m - margin / 2.0)
        for cx, cy in soil:
            jitter = rng.normal(0.0, 0.03, size=3).astype(np.float32)
            _blend_patch(img, cx / r, cy / r, radius_px, brown + jitter, strength=0.8)
        for cx, cy in centers:
            _blend_patch(img, cx / r, cy / r, radius_px, brown, strength=0.9)
        np.clip(img, 0.0, 1.0, out=img)
        mosaics[RGB] = Orthomosaic(RGB, r, img)

    if LIDAR in modalities:
        r = res[LIDAR]
        side = int(round(extent_m / r))
        img = _smooth_noise(rng, (side, side), 60.0 / r, 0.4)
        img += np.float32(1.0)
        n_mounds = int(round(p.mound_per_hectare * hectares))
        mounds = _scatter(rng, n_mounds, margin / 2.0, extent_m - margin / 2.0)
        mound_h = rng.uniform(*p.mound_height_range, size=n_mounds)
        for (cx, cy), h_m in zip(mounds, mound_h):
            _paint_gaussian(img, cx / r, cy / r, h_m, p.mound_sigma_m / r)
        for cx, cy in centers:
            _paint_gaussian(img, cx / r, cy / r, p.lidar_bump_height, 3.0 / r)
        mosaics[LIDAR] = Orthomosaic(LIDAR, r, img)

    return mosaics, registry
