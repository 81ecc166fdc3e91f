"""Raster cropping and the multimodal tile data model.

An orthomosaic per modality is cut into square tiles on a regular grid,
tiles are labeled positive when a registered object center falls inside
them, thermal tiles are downshifted to a zero minimum, sensor-void tiles
are dropped, and modalities can be blended into synthetic fused bands.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ExtentMismatchError, GeometryError

THERMAL = "thermal"
RGB = "rgb"
LIDAR = "lidar"
BASE_MODALITIES = (THERMAL, RGB, LIDAR)

# label codes (int8)
UNLABELED = -1
NEGATIVE = 0
POSITIVE = 1
LABEL_NAMES = {UNLABELED: "unlabeled", NEGATIVE: "negative", POSITIVE: "positive"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}

# label-source codes (int8)
SOURCE_NONE = 0
SOURCE_GROUND_TRUTH = 1
SOURCE_HUMAN = 2
SOURCE_SIMULATED = 3
SOURCE_NAMES = {
    SOURCE_NONE: "none",
    SOURCE_GROUND_TRUTH: "ground_truth",
    SOURCE_HUMAN: "human",
    SOURCE_SIMULATED: "simulated_oracle",
}
SOURCE_CODES = {v: k for k, v in SOURCE_NAMES.items()}


def _channels_for(modality: str) -> int:
    return 3 if modality == RGB else 1


@dataclass
class Orthomosaic:
    """One georeferenced raster band: (H, W, C) float32 pixels.

    ``origin_xy`` is the world position (meters) of the corner of pixel
    (0, 0); x grows with columns, y with rows.
    """

    modality: str
    resolution_m: float
    pixels: np.ndarray
    origin_xy: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be (H, W, C), got {self.pixels.shape}")
        if self.resolution_m <= 0:
            raise ValueError("resolution_m must be positive")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("mosaic must contain at least one pixel")
        if not np.isfinite(self.pixels).all():
            raise ValueError("mosaic contains non-finite pixels")

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def extent_m(self) -> tuple[float, float]:
        """(x, y) side lengths in meters."""
        h, w = self.pixels.shape[:2]
        return (w * self.resolution_m, h * self.resolution_m)


@dataclass(frozen=True)
class CropGeometry:
    """Square tiling: side ``interval_m``, grid step ``stride_m``."""

    interval_m: float = 20.0
    stride_m: float = 5.0

    def __post_init__(self):
        if self.interval_m <= 0 or self.stride_m <= 0:
            raise GeometryError("interval_m and stride_m must be positive")
        if self.stride_m > self.interval_m:
            raise GeometryError("stride_m must not exceed interval_m")

    def pixels_per_side(self, resolution_m: float, modality: str = "?") -> int:
        return _as_pixel_count(self.interval_m, resolution_m, "interval", modality)

    def stride_pixels(self, resolution_m: float, modality: str = "?") -> int:
        return _as_pixel_count(self.stride_m, resolution_m, "stride", modality)


def _as_pixel_count(meters: float, resolution_m: float, what: str, modality: str) -> int:
    ratio = meters / resolution_m
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-6:
        raise GeometryError(
            f"{what} {meters} m is not an integer pixel count at the "
            f"{modality} resolution of {resolution_m} m/px (ratio {ratio})"
        )
    return int(n)


@dataclass
class MiddenRegistry:
    """World-meter coordinates of known positive-object centers."""

    coords: np.ndarray  # (K, 2) float64

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.coords)


def grid_positions_per_axis(length_m: float, interval_m: float, stride_m: float) -> int:
    """Tiles along one axis: floor((L - I) / S) + 1 when L >= I, else 0."""
    if length_m < interval_m:
        return 0
    return int(np.floor((length_m - interval_m) / stride_m + 1e-9)) + 1


class Tile:
    """Read-only view of one tile inside a :class:`Tileset`."""

    __slots__ = ("_ts", "id")

    def __init__(self, tileset: "Tileset", tile_id: int):
        self._ts = tileset
        self.id = int(tile_id)

    @property
    def center_xy(self) -> tuple[float, float]:
        return tuple(self._ts.centers[self.id])

    @property
    def per_modality_pixels(self) -> dict[str, np.ndarray]:
        return {m: self._ts.pixels[m][self.id] for m in self._ts.modalities}

    def pixels(self, modality: str) -> np.ndarray:
        return self._ts.pixels[modality][self.id]

    @property
    def label(self) -> int:
        return int(self._ts.labels[self.id])

    @property
    def label_name(self) -> str:
        return LABEL_NAMES[self.label]

    @property
    def label_source(self) -> str:
        return SOURCE_NAMES[int(self._ts.label_sources[self.id])]

    @property
    def metric_value(self) -> float | None:
        if self._ts.metric_values is None:
            return None
        return float(self._ts.metric_values[self.id])


@dataclass
class Tileset:
    """Indexed multimodal tiles stored as per-modality pixel stacks.

    Tile ids are dense [0, N). Arrays other than labels are treated as
    immutable once constructed; label mutation is serialized by whoever
    owns the tileset (a single active session or the CLI).
    """

    modalities: tuple[str, ...]
    pixels: dict[str, np.ndarray]  # modality -> (N, h, w, c) float32
    centers: np.ndarray  # (N, 2) float64 world meters
    labels: np.ndarray  # (N,) int8
    label_sources: np.ndarray  # (N,) int8
    crop: CropGeometry
    resolutions: dict[str, float] = field(default_factory=dict)
    origin_xy: tuple[float, float] = (0.0, 0.0)
    provenance: str = ""
    metric_values: np.ndarray | None = None
    thermal_shifts: np.ndarray | None = None
    removed_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        n = len(self.centers)
        for m in self.modalities:
            if m not in self.pixels:
                raise ValueError(f"missing pixel stack for declared modality {m!r}")
            if len(self.pixels[m]) != n:
                raise ValueError(f"pixel stack for {m!r} has wrong length")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def n_tiles(self) -> int:
        return len(self.centers)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "positive": int((self.labels == POSITIVE).sum()),
            "negative": int((self.labels == NEGATIVE).sum()),
            "unlabeled": int((self.labels == UNLABELED).sum()),
        }

    @property
    def positive_rate(self) -> float:
        labeled = (self.labels != UNLABELED).sum()
        if labeled == 0:
            return 0.0
        return float((self.labels == POSITIVE).sum() / labeled)

    def tile(self, tile_id: int) -> Tile:
        if not 0 <= tile_id < len(self):
            raise IndexError(f"tile id {tile_id} out of range [0, {len(self)})")
        return Tile(self, tile_id)

    def __iter__(self):
        return (Tile(self, i) for i in range(len(self)))

    def require_modality(self, modality: str) -> np.ndarray:
        if modality not in self.pixels:
            raise KeyError(
                f"tileset has no modality {modality!r}; available: {sorted(self.pixels)}"
            )
        return self.pixels[modality]

    def set_label(self, tile_id: int, label: int, source: int) -> None:
        if label not in LABEL_NAMES:
            raise ValueError(f"unknown label code {label}")
        if (label == UNLABELED) != (source == SOURCE_NONE):
            raise ValueError("label_source must be none exactly when label is unlabeled")
        self.labels[tile_id] = label
        self.label_sources[tile_id] = source

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        n = len(self)
        if self.labels.shape != (n,) or self.label_sources.shape != (n,):
            raise ValueError("label arrays must have one entry per tile")
        unl = self.labels == UNLABELED
        if not (self.label_sources[unl] == SOURCE_NONE).all():
            raise ValueError("unlabeled tiles must have label_source none")
        if not (self.label_sources[~unl] != SOURCE_NONE).all():
            raise ValueError("labeled tiles must carry a label source")
        if THERMAL in self.pixels and self.thermal_shifts is not None:
            mins = self.pixels[THERMAL].reshape(n, -1).min(axis=1) if n else np.zeros(0)
            if n and not np.allclose(mins, 0.0, atol=1e-6):
                raise ValueError("downshifted thermal tiles must have a zero minimum")


def crop_orthomosaics(
    mosaics: dict[str, Orthomosaic],
    geometry: CropGeometry,
    registry: MiddenRegistry | None,
    provenance: str = "",
) -> Tileset:
    """Cut every modality into tiles on the shared (stride, interval) grid.

    One tile is produced per grid offset (i*stride, j*stride) where the full
    interval fits inside the extent. A tile is labeled positive when a
    registry center lies in its half-open world square [x0, x0+I) x
    [y0, y0+I): the low edge belongs to the tile, the high edge does not.
    With ``registry=None`` every tile starts unlabeled.
    """
    if not mosaics:
        raise ValueError("need at least one orthomosaic")
    mods = tuple(mosaics)

    extents = {m: mosaics[m].extent_m for m in mods}
    origins = {m: mosaics[m].origin_xy for m in mods}
    ref = mods[0]
    for m in mods[1:]:
        same_extent = np.allclose(extents[m], extents[ref], atol=1e-6)
        same_origin = np.allclose(origins[m], origins[ref], atol=1e-6)
        if not (same_extent and same_origin):
            detail = ", ".join(
                f"{k}: origin={origins[k]}, extent={tuple(round(v, 6) for v in extents[k])}"
                for k in mods
            )
            raise ExtentMismatchError(f"modalities cover different world extents ({detail})")

    # integer pixel geometry per modality; GeometryError names the offender
    side_px = {m: geometry.pixels_per_side(mosaics[m].resolution_m, m) for m in mods}
    step_px = {m: geometry.stride_pixels(mosaics[m].resolution_m, m) for m in mods}

    counts = {}
    for m in mods:
        h, w = mosaics[m].pixels.shape[:2]
        nx = (w - side_px[m]) // step_px[m] + 1 if w >= side_px[m] else 0
        ny = (h - side_px[m]) // step_px[m] + 1 if h >= side_px[m] else 0
        counts[m] = (nx, ny)
    if len(set(counts.values())) != 1:
        raise ExtentMismatchError(f"modalities disagree on the tile grid: {counts}")
    nx, ny = counts[ref]
    n_tiles = nx * ny
    origin = origins[ref]

    stride, interval = geometry.stride_m, geometry.interval_m
    ix = np.tile(np.arange(nx), ny)
    iy = np.repeat(np.arange(ny), nx)
    centers = np.empty((n_tiles, 2), dtype=float)
    centers[:, 0] = origin[0] + ix * stride + interval / 2.0
    centers[:, 1] = origin[1] + iy * stride + interval / 2.0

    pixels: dict[str, np.ndarray] = {}
    for m in mods:
        src = mosaics[m].pixels
        n_px, s_px = side_px[m], step_px[m]
        c = src.shape[2]
        out = np.empty((n_tiles, n_px, n_px, c), dtype=np.float32)
        for j in range(ny):
            r0 = j * s_px
            row = src[r0 : r0 + n_px]
            for i in range(nx):
                c0 = i * s_px
                out[j * nx + i] = row[:, c0 : c0 + n_px]
        pixels[m] = out

    labels = np.full(n_tiles, UNLABELED, dtype=np.int8)
    sources = np.full(n_tiles, SOURCE_NONE, dtype=np.int8)
    if registry is not None:
        labels[:] = NEGATIVE
        sources[:] = SOURCE_GROUND_TRUTH
        ext = extents[ref]
        offs_x = np.arange(nx) * stride
        offs_y = np.arange(ny) * stride
        for cx, cy in registry.coords:
            rx, ry = cx - origin[0], cy - origin[1]
            if not (0 <= rx <= ext[0] and 0 <= ry <= ext[1]):
                raise ValueError(
                    f"registry center ({cx}, {cy}) lies outside the mosaic extent"
                )
            hit_x = np.nonzero((offs_x <= rx) & (rx < offs_x + interval))[0]
            hit_y = np.nonzero((offs_y <= ry) & (ry < offs_y + interval))[0]
            for j in hit_y:
                labels[j * nx + hit_x] = POSITIVE

    resolutions = {m: mosaics[m].resolution_m for m in mods}
    return Tileset(
        modalities=mods,
        pixels=pixels,
        centers=centers,
        labels=labels,
        label_sources=sources,
        crop=geometry,
        resolutions=resolutions,
        origin_xy=origin,
        provenance=provenance,
    )


def downshift_thermal(tileset: Tileset) -> Tileset:
    """Shift each thermal tile so its minimum is exactly 0; records the shifts.

    Idempotent: already-shifted tiles get a zero additional shift. Other
    modalities are untouched.
    """
    thermal = tileset.require_modality(THERMAL)
    n = len(tileset)
    if n == 0:
        shifts = np.zeros(0, dtype=np.float32)
        return replace(tileset, thermal_shifts=shifts)
    mins = thermal.reshape(n, -1).min(axis=1)
    shifted = thermal - mins[:, None, None, None]
    # exact-zero minimum even under float cancellation
    shifted = np.maximum(shifted, 0.0)
    prior = tileset.thermal_shifts
    shifts = mins.astype(np.float32) if prior is None else prior + mins.astype(np.float32)
    pixels = dict(tileset.pixels)
    pixels[THERMAL] = shifted
    return replace(tileset, pixels=pixels, thermal_shifts=shifts)


def filter_zero_tiles(tileset: Tileset) -> Tileset:
    """Drop tiles whose pre-downshift thermal or RGB block is entirely zero.

    Uses recorded shifts to reason about pre-shift values when the thermal
    band was already downshifted, so the filter keeps targeting sensor-void
    regions rather than becoming vacuous. Ids are re-densified; the original
    ids of removed tiles are appended to ``removed_ids``.
    """
    thermal = tileset.require_modality(THERMAL)
    rgb = tileset.require_modality(RGB)
    n = len(tileset)
    if n == 0:
        return tileset
    flat_t = thermal.reshape(n, -1)
    zero_t = (flat_t.min(axis=1) == 0) & (flat_t.max(axis=1) == 0)
    if tileset.thermal_shifts is not None:
        zero_t &= tileset.thermal_shifts == 0
    flat_r = rgb.reshape(n, -1)
    zero_r = (flat_r.min(axis=1) == 0) & (flat_r.max(axis=1) == 0)
    keep = ~(zero_t | zero_r)
    if keep.all():
        return tileset
    removed = tileset.removed_ids + np.nonzero(~keep)[0].tolist()
    pixels = {m: arr[keep] for m, arr in tileset.pixels.items()}
    return replace(
        tileset,
        pixels=pixels,
        centers=tileset.centers[keep],
        labels=tileset.labels[keep],
        label_sources=tileset.label_sources[keep],
        metric_values=None if tileset.metric_values is None else tileset.metric_values[keep],
        thermal_shifts=None if tileset.thermal_shifts is None else tileset.thermal_shifts[keep],
        removed_ids=removed,
    )


def _resample_stack(stack: np.ndarray, side: int) -> np.ndarray:
    """Resample (N, h, w, c) blocks to (N, side, side, c).

    Integer-factor shrinks use block means; everything else maps indices
    nearest-neighbor (used for upsampling).
    """
    n, h, w, c = stack.shape
    if h == side and w == side:
        return stack
    if h % side == 0 and w % side == 0:
        fh, fw = h // side, w // side
        return (
            stack.reshape(n, side, fh, side, fw, c).mean(axis=(2, 4)).astype(np.float32)
        )
    rows = np.minimum((np.arange(side) * h) // side, h - 1)
    cols = np.minimum((np.arange(side) * w) // side, w - 1)
    return stack[:, rows][:, :, cols]


def fused_name(modalities) -> str:
    return "+".join(modalities)


def fuse_modalities(
    tileset: Tileset, modalities, weights=None
) -> Tileset:
    """Blend the given source modalities into one synthetic band.

    Sources are resampled to the thermal grid (or to the coarsest source
    when the tileset has no thermal band); single-channel sources broadcast
    to 3 channels when any source is RGB. Pixel values are the weighted
    average of the resampled sources; weights default to equal and must sum
    to 1.
    """
    modalities = tuple(modalities)
    if not modalities:
        raise ValueError("need at least one source modality")
    for m in modalities:
        tileset.require_modality(m)
    if len(modalities) == 1:
        return tileset  # identity fusion

    m_count = len(modalities)
    if weights is None:
        w = np.full(m_count, 1.0 / m_count)
    else:
        from ..validation import check_weights

        w = check_weights(weights, m_count, name="fusion weights")

    if THERMAL in tileset.pixels:
        side = tileset.pixels[THERMAL].shape[1]
    else:
        side = min(tileset.pixels[m].shape[1] for m in modalities)
    channels = 3 if any(tileset.pixels[m].shape[3] == 3 for m in modalities) else 1

    n = len(tileset)
    fused = np.zeros((n, side, side, channels), dtype=np.float32)
    for wm, m in zip(w, modalities):
        block = _resample_stack(tileset.pixels[m], side)
        if block.shape[3] != channels:
            block = np.repeat(block, channels, axis=3)
        fused += np.float32(wm) * block

    name = fused_name(modalities)
    pixels = dict(tileset.pixels)
    pixels[name] = fused
    resolutions = dict(tileset.resolutions)
    base = modalities[0] if THERMAL not in tileset.resolutions else THERMAL
    if base in resolutions:
        resolutions[name] = resolutions[base]
    return replace(
        tileset,
        modalities=tileset.modalities + (name,) if name not in tileset.modalities else tileset.modalities,
        pixels=pixels,
        resolutions=resolutions,
    )


def build_tileset(
    mosaics: dict[str, Orthomosaic],
    geometry: CropGeometry,
    registry: MiddenRegistry | None,
    provenance: str = "",
) -> Tileset:
    """Standard preparation: crop, drop sensor-void tiles, downshift thermal."""
    ts = crop_orthomosaics(mosaics, geometry, registry, provenance=provenance)
    if THERMAL in ts.pixels and RGB in ts.pixels:
        ts = filter_zero_tiles(ts)
    if THERMAL in ts.pixels:
        ts = downshift_thermal(ts)
    return ts
