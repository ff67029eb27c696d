"""Exception hierarchy shared across the package."""


class SparseNCNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SparseNCNetError, ValueError):
    """Operand dimensions or channel counts do not agree."""


class FormatError(SparseNCNetError, ValueError):
    """A binary file could not be decoded."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class NonFiniteValueError(FormatError):
    pass


class GeometryError(SparseNCNetError, ValueError):
    """Degenerate projective geometry (singular homography, point at infinity)."""
