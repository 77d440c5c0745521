"""Exception hierarchy shared by all modules."""


class ProgVolError(Exception):
    """Base class for every error raised by progvol."""


class DimensionMismatch(ProgVolError, ValueError):
    pass


class NonPositiveDepth(ProgVolError, ValueError):
    pass


class PixelOutOfRange(ProgVolError, ValueError):
    pass


class InvalidInterval(ProgVolError, ValueError):
    pass


class OutOfGrid(ProgVolError, ValueError):
    """Raised by voxelize; ``indices`` lists the offending vertices."""

    def __init__(self, indices):
        self.indices = list(int(i) for i in indices)
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"vertices outside grid: {shown}{more}")


class EmptyVolume(ProgVolError, ValueError):
    pass


# weight / image / vertex files
class BadMagic(ProgVolError, ValueError):
    pass


class UnsupportedVersion(ProgVolError, ValueError):
    pass


class TruncatedFile(ProgVolError, ValueError):
    pass


class InconsistentDims(ProgVolError, ValueError):
    pass


class BadHeader(ProgVolError, ValueError):
    pass


class InsufficientBodyPixels(ProgVolError, ValueError):
    pass


class MissingActivations(ProgVolError, RuntimeError):
    pass


class EquivalenceViolation(ProgVolError, AssertionError):
    def __init__(self, max_diff, pixel):
        self.max_diff = float(max_diff)
        self.pixel = tuple(int(p) for p in pixel)
        super().__init__(
            f"progressive and dense renders differ by {self.max_diff:.3e} at pixel {self.pixel}"
        )


class TooSmall(ProgVolError, ValueError):
    pass


class SchemaError(ProgVolError, ValueError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class MissingFile(ProgVolError, FileNotFoundError):
    pass


class BadCamera(ProgVolError, ValueError):
    pass


class BadDimension(ProgVolError, ValueError):
    pass


class IoError(ProgVolError, OSError):
    pass
