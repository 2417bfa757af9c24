"""Exception hierarchy shared by all modules.

Every error carries a short machine-greppable ``code`` used by the CLI when
printing failures, and a ``kind`` that selects the exit status.
"""


class RShiftError(Exception):
    code = "error"
    kind = "data"


class InvalidWindowError(RShiftError, ValueError):
    code = "invalid-window"


class TorusUnsupportedError(RShiftError, ValueError):
    code = "torus-unsupported"


class InsufficientPointsError(RShiftError, ValueError):
    code = "insufficient-points"


class DegenerateSampleError(RShiftError, ValueError):
    code = "degenerate-sample"


class OutOfRangeError(RShiftError, ValueError):
    code = "out-of-range"


class GeometryMismatchError(RShiftError, ValueError):
    code = "geometry-mismatch"


class ModelError(RShiftError, ValueError):
    code = "model"


class ParseError(RShiftError, ValueError):
    code = "parse"


class ValidationError(RShiftError, ValueError):
    code = "validation"


class ConfigError(RShiftError, ValueError):
    code = "config"


class StaleCacheError(RShiftError):
    code = "stale-cache"


class NumericError(RShiftError, ArithmeticError):
    code = "numeric"
    kind = "numeric"


class SimulationError(NumericError):
    code = "simulation"


class FitFailureError(NumericError):
    code = "fit-failure"


class EstimationError(NumericError):
    code = "estimation"


class DegenerateShiftError(NumericError):
    code = "degenerate-shift"
