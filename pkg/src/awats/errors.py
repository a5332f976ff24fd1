"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, ValidationError and
FormatError -> 3, NumericError -> 4.
"""


class AwatsError(Exception):
    """Base class for every error raised by this package."""


class FormatError(AwatsError):
    """File contents do not match the expected on-disk format."""


class UnsupportedTypeError(FormatError):
    """Well-formed container holding a datatype this reader does not support."""


class TruncatedFileError(FormatError):
    """Declared shape is inconsistent with the number of bytes present."""


class ValidationError(AwatsError):
    """Input data violates a documented invariant or precondition."""


class DimensionError(ValidationError):
    """Arrays whose shapes must agree do not."""


class DomainError(ValidationError):
    """A value is outside the mathematical domain of an operation."""


class EmptyRoiError(ValidationError):
    """An atlas label in the declared range has no voxels."""

    def __init__(self, label: int):
        super().__init__(f"ROI label {label} has no voxels in the atlas")
        self.label = label


class StratificationError(ValidationError):
    """A data split left a class or partition empty."""


class ConfigError(AwatsError):
    """A configuration value is out of range or internally inconsistent."""


class NumericError(AwatsError):
    """A numeric procedure diverged or produced non-finite values."""
