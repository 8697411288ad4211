"""Exception types raised across the package."""


class QubitCapError(ValueError):
    """Requested register is larger than the dense simulator allows."""


class UnboundParameterError(ValueError):
    pass


class UnsupportedGradientError(ValueError):
    """Parameter-shift was requested for a gate that is not a Pauli rotation."""


class ShapeError(ValueError):
    pass


class CacheError(RuntimeError):
    """Backward was called without a matching forward pass."""


class IDXFormatError(ValueError):
    pass


class IDXLengthError(ValueError):
    pass


class DatasetLayoutError(ValueError):
    pass


class StratificationError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    """Checkpoint or sidecar file is missing, truncated or malformed."""


class ImageDecodeError(ValueError):
    """Too many images in a folder could not be decoded."""
