"""Exception types shared across the package."""


class DataError(Exception):
    """Input data or configuration failed validation."""


class MatrixFormatError(DataError):
    """Binary matrix file has a bad magic, version, or header."""


class MatrixTruncationError(MatrixFormatError):
    """Binary matrix payload size disagrees with its header."""


class MatrixDataError(DataError):
    """Matrix payload contains values that are not permitted (NaN)."""


class ManifestError(DataError):
    """Manifest is malformed or inconsistent with its matrices."""
