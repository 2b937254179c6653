"""Exception types raised across the package."""


class CPIAError(Exception):
    """Base class for all package errors."""


class ArchiveError(CPIAError, ValueError):
    """Malformed, truncated or inconsistent tensor archive."""


class ShapeError(CPIAError, ValueError):
    """Tensor shapes do not agree with what an operation expects."""


class NetworkError(CPIAError, ValueError):
    """Invalid network manifest or layer configuration."""


class ChecksumError(CPIAError, ValueError):
    """An action log does not belong to the activation it is replayed over."""


class ReplayError(CPIAError, ValueError):
    """An action log is internally inconsistent."""


class PlanError(CPIAError, ValueError):
    """Invalid ROI set or painting policy."""


class ConfigError(CPIAError, ValueError):
    """Invalid run configuration."""
