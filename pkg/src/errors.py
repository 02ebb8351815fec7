class PolyrepError(Exception):
    """Base class for every error raised by polyrep."""


class PreconditionError(PolyrepError, ValueError):
    """An argument violates the documented precondition of an operation."""


class DegenerateGeometryError(PreconditionError):
    """A polygon or shape has zero area or too few distinct vertices."""


class UndefinedIoUError(PolyrepError):
    """IoU of two empty regions."""


class UndefinedMapError(PolyrepError):
    """mAP requested while no class has ground truth."""


class NumericRangeError(PolyrepError, ArithmeticError):
    """A decoded quantity overflowed or is not finite."""


class OutOfFovError(PolyrepError):
    """An image point lies beyond the camera's field of view."""


class LossOfFovError(PreconditionError):
    """A projection cannot represent the requested field of view."""


class InvalidCameraError(PreconditionError):
    """Camera intrinsics do not define a monotonic radial model."""


class FormatError(PolyrepError):
    """Serialized data is inconsistent (e.g. RLE counts do not cover the grid)."""


class SchemaError(FormatError):
    """A document does not match its schema.

    Attributes
    ----------
    path : str
        Dotted path of the offending field, e.g. ``instances[2].rle``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class EmptyCorpusError(FormatError):
    """A corpus holds no frames or no instances where some are required."""
