"""Exception types raised across the package."""


class TileMTSError(Exception):
    """Base class for all package errors."""


class GeometryError(TileMTSError, ValueError):
    """Image or tile geometry cannot satisfy the request."""


class InvalidSpecError(TileMTSError, ValueError):
    pass


class InvalidConfigError(TileMTSError, ValueError):
    pass


class ShapeError(TileMTSError, ValueError):
    pass


class EmptyInputError(TileMTSError, ValueError):
    pass


class InvalidPartitionError(TileMTSError, ValueError):
    pass


class SizeError(TileMTSError, ValueError):
    """Instance too large for exhaustive enumeration."""


class DivergenceError(TileMTSError, RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite objective {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class RenderError(TileMTSError, ValueError):
    pass


class StageError(TileMTSError, RuntimeError):
    """Failure inside a pipeline stage; message carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class InvalidInputError(TileMTSError, ValueError):
    pass
