from .core import (
    BASE_MODALITIES,
    LABEL_CODES,
    LABEL_NAMES,
    LIDAR,
    NEGATIVE,
    POSITIVE,
    RGB,
    SOURCE_CODES,
    SOURCE_GROUND_TRUTH,
    SOURCE_HUMAN,
    SOURCE_NAMES,
    SOURCE_NONE,
    SOURCE_SIMULATED,
    THERMAL,
    UNLABELED,
    CropGeometry,
    MiddenRegistry,
    Orthomosaic,
    Tile,
    Tileset,
    build_tileset,
    crop_orthomosaics,
    downshift_thermal,
    filter_zero_tiles,
    fuse_modalities,
    fused_name,
    grid_positions_per_axis,
)
from .io import load_site, load_tileset, save_site, save_tileset
from .synthetic import WarmBlobParams, generate_synthetic_site

__all__ = [
    "BASE_MODALITIES",
    "LABEL_CODES",
    "LABEL_NAMES",
    "LIDAR",
    "NEGATIVE",
    "POSITIVE",
    "RGB",
    "SOURCE_CODES",
    "SOURCE_GROUND_TRUTH",
    "SOURCE_HUMAN",
    "SOURCE_NAMES",
    "SOURCE_NONE",
    "SOURCE_SIMULATED",
    "THERMAL",
    "UNLABELED",
    "CropGeometry",
    "MiddenRegistry",
    "Orthomosaic",
    "Tile",
    "Tileset",
    "WarmBlobParams",
    "build_tileset",
    "crop_orthomosaics",
    "downshift_thermal",
    "filter_zero_tiles",
    "fuse_modalities",
    "fused_name",
    "generate_synthetic_site",
    "grid_positions_per_axis",
    "load_site",
    "load_tileset",
    "save_site",
    "save_tileset",
]
