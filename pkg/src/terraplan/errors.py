"""Exception types raised across the toolkit."""


class TerraplanError(Exception):
    """Base class for all toolkit errors."""


class CloudFormatError(TerraplanError):
    """A point-cloud file could not be parsed.

    Carries the offending line number when one is known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f" in {path}"
        if line is not None:
            where += f" at line {line}"
        super().__init__(f"{message}{where}")


class FieldBoundsError(TerraplanError):
    """A field query fell outside the interpolatable grid region."""

    def __init__(self, point, lo, hi, label=None):
        self.point = tuple(float(v) for v in point)
        self.lo = tuple(float(v) for v in lo)
        self.hi = tuple(float(v) for v in hi)
        self.label = label
        msg = (
            f"query point {self.point} outside interpolatable bounds "
            f"{self.lo} .. {self.hi}"
        )
        if label:
            msg += f" ({label})"
        super().__init__(msg)


class NoObstacleError(TerraplanError):
    """Distance field construction was asked for a fully free grid."""


class NoStandableError(TerraplanError):
    """No voxel in the search space is standable."""


class SnapError(TerraplanError):
    """A start or goal point could not be snapped to standable terrain."""

    def __init__(self, point, nearest=None, snap_radius=None):
        self.point = tuple(float(v) for v in point)
        self.nearest = None if nearest is None else tuple(float(v) for v in nearest)
        msg = f"cannot snap {self.point} to standable terrain"
        if snap_radius is not None:
            msg += f" within {snap_radius:g} m"
        if self.nearest is not None:
            msg += f" (nearest standable cell at {self.nearest})"
        super().__init__(msg)


class NoPathError(TerraplanError):
    """The goal is unreachable from the start in the search space."""

    def __init__(self, explored):
        self.explored = int(explored)
        super().__init__(f"no path found after exploring {self.explored} cells")


class SolverError(TerraplanError):
    """The objective returned a non-finite value or gradient."""

    def __init__(self, message, x=None):
        self.x = None if x is None else x.copy()
        super().__init__(message)
