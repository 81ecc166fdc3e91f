"""Shared fixtures: small deterministic sites plus the acceptance benchmark."""
from __future__ import annotations

import numpy as np
import pytest

import rarequery as rq
from rarequery.engine import compute_feature_cache
from rarequery.tilestore import RGB, THERMAL, WarmBlobParams

# acceptance benchmark: ~9,000 tiles, ~0.9% positives, moderate thermal contrast
BENCH_SEED = 20260810
BENCH_EXTENT_M = 1900.0
BENCH_POSITIVES = 81
BENCH_GEOMETRY = rq.CropGeometry(20.0, 20.0)


@pytest.fixture(scope="session")
def benchmark_tileset() -> rq.Tileset:
    mosaics, registry = rq.generate_synthetic_site(
        seed=BENCH_SEED,
        extent_m=BENCH_EXTENT_M,
        positive_count=BENCH_POSITIVES,
        imbalance_target=0.01,
        modalities=(THERMAL, RGB),
        geometry=BENCH_GEOMETRY,
    )
    ts = rq.build_tileset(mosaics, BENCH_GEOMETRY, registry, provenance=f"bench:{BENCH_SEED}")
    rq.compute_metric(ts)
    return ts


@pytest.fixture(scope="session")
def benchmark_features(benchmark_tileset):
    return compute_feature_cache(benchmark_tileset, (THERMAL, RGB))


def make_small_site(
    seed: int = 11,
    extent_m: float = 400.0,
    positives: int = 12,
    modalities=(THERMAL, RGB),
    stride_m: float = 20.0,
    blob_params: WarmBlobParams | None = None,
):
    geometry = rq.CropGeometry(20.0, stride_m)
    mosaics, registry = rq.generate_synthetic_site(
        seed=seed,
        extent_m=extent_m,
        positive_count=positives,
        imbalance_target=0.5,
        modalities=modalities,
        geometry=rq.CropGeometry(20.0, 20.0),
        blob_params=blob_params,
    )
    ts = rq.build_tileset(mosaics, geometry, registry, provenance=f"small:{seed}")
    return ts, registry


@pytest.fixture(scope="module")
def small_tileset() -> rq.Tileset:
    ts, _ = make_small_site()
    rq.compute_metric(ts)
    return ts


def manual_tileset(
    thermal_blocks,
    rgb_blocks=None,
    labels=None,
    crop=rq.CropGeometry(20.0, 20.0),
) -> rq.Tileset:
    """Hand-built tileset from explicit per-tile pixel blocks."""
    thermal = np.asarray(thermal_blocks, dtype=np.float32)
    if thermal.ndim == 3:
        thermal = thermal[..., None]
    n = len(thermal)
    pixels = {"thermal": thermal}
    modalities = ["thermal"]
    if rgb_blocks is not None:
        rgb = np.asarray(rgb_blocks, dtype=np.float32)
        pixels["rgb"] = rgb
        modalities.append("rgb")
    if labels is None:
        lab = np.full(n, rq.tilestore.UNLABELED, dtype=np.int8)
        src = np.full(n, rq.tilestore.SOURCE_NONE, dtype=np.int8)
    else:
        lab = np.asarray(labels, dtype=np.int8)
        src = np.where(
            lab == rq.tilestore.UNLABELED,
            rq.tilestore.SOURCE_NONE,
            rq.tilestore.SOURCE_GROUND_TRUTH,
        ).astype(np.int8)
    centers = np.column_stack(
        [10.0 + 20.0 * np.arange(n), np.full(n, 10.0)]
    ).astype(float)
    return rq.Tileset(
        modalities=tuple(modalities),
        pixels=pixels,
        centers=centers,
        labels=lab,
        label_sources=src,
        crop=crop,
        resolutions={m: 0.5 for m in modalities},
    )


def _print_acceptance_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((name, status, getattr(rep, "duration", 0.0)))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status, dur in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}  ({dur:.1f}s)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    _print_acceptance_summary(terminalreporter)
