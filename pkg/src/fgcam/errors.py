"""Error types shared across the engine."""


class FgcamError(Exception):
    """Base class for all engine errors."""


class ShapeError(FgcamError):
    """Tensor shapes do not satisfy an operation's contract."""


class ModelFormatError(FgcamError):
    """An FGM model file could not be loaded.

    ``code`` is one of ``malformed-header``, ``shape-mismatch``,
    ``checksum-mismatch`` or ``invalid-graph``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class UnsupportedStructureError(FgcamError):
    """The model graph has a structure the engine does not support."""


class UnknownLayerError(FgcamError):
    """A layer name was not found in the model or trace."""
