# cvae_beam/errors.py
"""Exception hierarchy. Each subclass also derives from the matching builtin."""


class CvaeBeamError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CvaeBeamError, ValueError):
    pass


class DomainError(CvaeBeamError, ValueError):
    pass


class DimensionError(CvaeBeamError, ValueError):
    pass


class DegenerateInputError(CvaeBeamError, ValueError):
    pass


class FormatError(CvaeBeamError):
    pass


class SolverError(CvaeBeamError, RuntimeError):
    pass


class TrainingError(CvaeBeamError, RuntimeError):
    pass


class TrialError(CvaeBeamError, RuntimeError):
    pass
