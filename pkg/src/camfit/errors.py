"""Exception types shared across the package."""


class CamfitError(Exception):
    """Base class for all package errors."""


class DomainError(CamfitError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeMismatchError(CamfitError, ValueError):
    """Array arguments have incompatible shapes."""


class BehindCameraError(CamfitError, ValueError):
    """A point projects from behind the camera (depth <= 0)."""

    def __init__(self, index, depth=None, frame=None):
        self.index = int(index)
        self.depth = None if depth is None else float(depth)
        self.frame = None if frame is None else int(frame)
        where = f"point {self.index}"
        if self.frame is not None:
            where = f"frame {self.frame}, {where}"
        msg = f"{where} is behind the camera"
        if self.depth is not None:
            msg += f" (depth={self.depth:.6g})"
        super().__init__(msg)


class DegenerateInputError(CamfitError, ValueError):
    """Input is geometrically degenerate (e.g. collinear point sets)."""
