"""On-disk formats: tileset directories and generated-site directories.

A tileset directory holds ``manifest.json``, ``labels.csv`` and one
``<modality>.f32`` blob per modality (header: magic ``RQTS``, version u32,
N u32, H u32, W u32, C u32, then N*H*W*C little-endian float32). Optional
per-tile scalars (rank metric, thermal shift) live in underscore-prefixed
sidecar blobs so round-trips preserve the full tileset state.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import (
    DigestMismatchError,
    TilesetFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .core import (
    LABEL_CODES,
    LABEL_NAMES,
    SOURCE_CODES,
    SOURCE_NAMES,
    CropGeometry,
    MiddenRegistry,
    Orthomosaic,
    Tileset,
)

TILE_MAGIC = b"RQTS"
MOSAIC_MAGIC = b"RQOM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, N, H, W, C

METRIC_SIDECAR = "_metric.f32"
SHIFT_SIDECAR = "_thermal_shift.f32"


def _write_blob(path: Path, arr: np.ndarray, magic: bytes = TILE_MAGIC) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 4:
        raise ValueError("blob arrays must be (N, H, W, C)")
    n, h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, FORMAT_VERSION, n, h, w, c))
        f.write(arr.tobytes())


def _read_blob(path: Path, magic: bytes = TILE_MAGIC) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path.name}: too short for a blob header")
    got_magic, version, n, h, w, c = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise TilesetFormatError(f"{path.name}: bad magic {got_magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path.name}: format version {version}, expected {FORMAT_VERSION}"
        )
    expected = _HEADER.size + 4 * n * h * w * c
    if len(data) != expected:
        raise TruncatedFileError(
            f"{path.name}: {len(data)} bytes, header promises {expected}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(n, h, w, c).copy()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_tileset(tileset: Tileset, path) -> Path:
    """Write a tileset directory; returns the directory path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    files: list[str] = []
    for m in tileset.modalities:
        _write_blob(root / f"{m}.f32", tileset.pixels[m])
        files.append(f"{m}.f32")

    sidecars: list[str] = []
    if tileset.metric_values is not None:
        _write_blob(root / METRIC_SIDECAR, tileset.metric_values.reshape(-1, 1, 1, 1))
        sidecars.append(METRIC_SIDECAR)
    if tileset.thermal_shifts is not None:
        _write_blob(root / SHIFT_SIDECAR, tileset.thermal_shifts.reshape(-1, 1, 1, 1))
        sidecars.append(SHIFT_SIDECAR)
    files.extend(sidecars)

    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label", "source", "center_x", "center_y"])
        for i in range(len(tileset)):
            w.writerow(
                [
                    i,
                    LABEL_NAMES[int(tileset.labels[i])],
                    SOURCE_NAMES[int(tileset.label_sources[i])],
                    repr(float(tileset.centers[i, 0])),
                    repr(float(tileset.centers[i, 1])),
                ]
            )
    files.append("labels.csv")

    manifest = {
        "format": "rqts",
        "format_version": FORMAT_VERSION,
        "modalities": list(tileset.modalities),
        "crop": {"interval_m": tileset.crop.interval_m, "stride_m": tileset.crop.stride_m},
        "counts": tileset.counts,
        "provenance": tileset.provenance,
        "origin_xy": list(tileset.origin_xy),
        "resolutions": {m: tileset.resolutions.get(m) for m in tileset.modalities},
        "removed_ids": list(tileset.removed_ids),
        "sidecars": sidecars,
        "digests": {name: _sha256(root / name) for name in files},
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return root


def load_tileset(path) -> Tileset:
    """Load a tileset directory written by :func:`save_tileset`."""
    root = Path(path)
    mf_path = root / "manifest.json"
    if not mf_path.exists():
        raise TilesetFormatError(f"{root}: no manifest.json")
    manifest = json.loads(mf_path.read_text())
    if manifest.get("format") != "rqts":
        raise TilesetFormatError(f"{root}: not a tileset directory")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{root}: manifest version {manifest.get('format_version')}, "
            f"expected {FORMAT_VERSION}"
        )

    for name, digest in manifest["digests"].items():
        p = root / name
        if not p.exists():
            raise TruncatedFileError(f"{root}: missing file {name}")
        actual = _sha256(p)
        if actual != digest:
            raise DigestMismatchError(f"{name}: sha256 {actual} != manifest {digest}")

    pixels = {m: _read_blob(root / f"{m}.f32") for m in manifest["modalities"]}

    ids, labels, sources, xs, ys = [], [], [], [], []
    with open(root / "labels.csv", newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            ids.append(int(row["id"]))
            labels.append(LABEL_CODES[row["label"]])
            sources.append(SOURCE_CODES[row["source"]])
            xs.append(float(row["center_x"]))
            ys.append(float(row["center_y"]))
    n = len(ids)
    if ids != list(range(n)):
        raise TilesetFormatError(f"{root}: tile ids are not dense [0, {n})")

    metric = None
    if METRIC_SIDECAR in manifest.get("sidecars", ()):
        metric = _read_blob(root / METRIC_SIDECAR).reshape(-1)
    shifts = None
    if SHIFT_SIDECAR in manifest.get("sidecars", ()):
        shifts = _read_blob(root / SHIFT_SIDECAR).reshape(-1)

    resolutions = {
        m: r for m, r in (manifest.get("resolutions") or {}).items() if r is not None
    }
    ts = Tileset(
        modalities=tuple(manifest["modalities"]),
        pixels=pixels,
        centers=np.column_stack([xs, ys]) if n else np.zeros((0, 2)),
        labels=np.asarray(labels, dtype=np.int8),
        label_sources=np.asarray(sources, dtype=np.int8),
        crop=CropGeometry(manifest["crop"]["interval_m"], manifest["crop"]["stride_m"]),
        resolutions=resolutions,
        origin_xy=tuple(manifest.get("origin_xy", (0.0, 0.0))),
        provenance=manifest.get("provenance", ""),
        metric_values=metric,
        thermal_shifts=shifts,
        removed_ids=list(manifest.get("removed_ids", ())),
    )
    if ts.counts != manifest["counts"]:
        raise TilesetFormatError(
            f"{root}: label counts {ts.counts} disagree with manifest {manifest['counts']}"
        )
    return ts


def save_site(mosaics: dict[str, Orthomosaic], registry: MiddenRegistry, path, meta=None) -> Path:
    """Write a generated-site directory (mosaics + positive-center registry)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for m, mosaic in mosaics.items():
        _write_blob(root / f"{m}_mosaic.f32", mosaic.pixels[None, ...], magic=MOSAIC_MAGIC)
    with open(root / "middens.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y"])
        for x, y in registry.coords:
            w.writerow([repr(float(x)), repr(float(y))])
    manifest = {
        "format": "rqsite",
        "format_version": FORMAT_VERSION,
        "modalities": {
            m: {"resolution_m": mo.resolution_m, "origin_xy": list(mo.origin_xy)}
            for m, mo in mosaics.items()
        },
        "meta": meta or {},
    }
    with open(root / "site_manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return root


def load_site(path) -> tuple[dict[str, Orthomosaic], MiddenRegistry, dict]:
    root = Path(path)
    manifest = json.loads((root / "site_manifest.json").read_text())
    if manifest.get("format") != "rqsite":
        raise TilesetFormatError(f"{root}: not a site directory")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"{root}: unsupported site format version")
    mosaics = {}
    for m, info in manifest["modalities"].items():
        block = _read_blob(root / f"{m}_mosaic.f32", magic=MOSAIC_MAGIC)
        mosaics[m] = Orthomosaic(
            m, info["resolution_m"], block[0], tuple(info.get("origin_xy", (0.0, 0.0)))
        )
    coords = []
    with open(root / "middens.csv", newline="") as f:
        for row in csv.DictReader(f):
            coords.append((float(row["x"]), float(row["y"])))
    return mosaics, MiddenRegistry(np.asarray(coords).reshape(-1, 2)), manifest.get("meta", {})
