"""Exception types shared across the toolkit."""


class PanoLayoutError(Exception):
    """Base class for all toolkit errors."""


class DomainError(PanoLayoutError, ValueError):
    """A scalar argument is outside its valid domain (fov, height, ...)."""


class DimensionError(PanoLayoutError, ValueError):
    """An array has an incompatible shape (e.g. panorama width != 2 * height)."""


class InvalidLayoutError(PanoLayoutError, ValueError):
    """A floor-plan polygon violates the Manhattan layout invariants."""


class FrameTooSmallError(PanoLayoutError, ValueError):
    """A ceiling-view frame does not contain the layout's bounding box."""


class EmptyMaskError(PanoLayoutError, ValueError):
    """Binarization produced no foreground pixels."""


class DegenerateGeometryError(PanoLayoutError, ValueError):
    """Extracted geometry is too thin or has too few lines to form a room."""


class DisconnectedCellsError(PanoLayoutError, ValueError):
    """Included grid cells do not form a single 4-connected region."""


class CameraOutsideError(PanoLayoutError, ValueError):
    """The camera position is not strictly inside the fitted footprint."""


class CheckpointError(PanoLayoutError, ValueError):
    """A checkpoint file is corrupt or does not match the model."""


class TrainingDivergedError(PanoLayoutError, RuntimeError):
    """Training hit a non-finite loss."""
