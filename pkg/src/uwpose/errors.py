"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems -> 1, data and
file problems -> 2, numerical divergence -> 3.
"""


class UwposeError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(UwposeError):
    """Tensor operands have incompatible shapes. Message names both shapes."""


class ContractViolationError(UwposeError):
    """An operation was called outside its contract (e.g. non-scalar backward root)."""


class InvalidConfigError(UwposeError):
    """A configuration object is internally inconsistent."""


class DegenerateQuaternionError(UwposeError):
    """Quaternion norm too close to zero to normalize."""


class DataError(UwposeError):
    """Base class for problems with input files or datasets."""


class ManifestError(DataError):
    """Malformed or missing manifest content. Message carries the line number."""


class ImageFormatError(DataError):
    """Image file not in a supported format (8-bit RGB PNG or binary PPM)."""


class CheckpointError(DataError):
    """Checkpoint file unreadable, truncated, or of an unsupported version."""


class OutOfBoundsError(UwposeError):
    """A pose or trajectory leaves the scene extent."""


class DivergenceError(UwposeError):
    """Training produced a non-finite loss or prediction."""
