"""Exception types raised across the package."""


class RadarSplatError(Exception):
    """Base class for all package errors."""


class GimbalLock(RadarSplatError):
    """Euler decomposition requested at |pitch| ~ pi/2."""


class EmptyFrame(RadarSplatError):
    """A frame ended up with zero points."""


class DimensionMismatch(RadarSplatError):
    pass


class DegenerateCovariance(RadarSplatError):
    pass


class DegenerateGeometry(RadarSplatError):
    """Weighted point set is rank deficient (collinear or coincident)."""


class NoGroundFound(RadarSplatError):
    pass


class TooShort(RadarSplatError):
    """Trajectory too short for the requested metric."""


class ConfigError(RadarSplatError):
    pass
