"""Exception types shared across the package."""


class RareQueryError(Exception):
    """Base class for package-specific failures."""


class GeometryError(RareQueryError, ValueError):
    """Crop geometry incompatible with the supplied rasters."""


class ExtentMismatchError(GeometryError):
    """Modalities do not cover the same world extent."""


class TilesetFormatError(RareQueryError, ValueError):
    """A persisted tileset could not be decoded."""


class VersionMismatchError(TilesetFormatError):
    pass


class TruncatedFileError(TilesetFormatError):
    pass


class DigestMismatchError(TilesetFormatError):
    pass
