"""Exception hierarchy shared by all stiffscale modules."""


class StiffscaleError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(StiffscaleError, ValueError):
    pass


class NonPositiveTemperature(StiffscaleError, ValueError):
    pass


class NonFiniteRate(StiffscaleError, ArithmeticError):
    pass


class MissingThermo(StiffscaleError, ValueError):
    pass


class InvalidNetwork(StiffscaleError, ValueError):
    """Malformed network definition (bad stoichiometry, unknown keys, ...)."""


class InvalidState(StiffscaleError, ValueError):
    pass


class NewtonDivergence(StiffscaleError, ArithmeticError):
    """The implicit solver could not make progress (step size collapsed)."""


class NonFiniteState(StiffscaleError, ArithmeticError):
    pass


class NegativeInput(StiffscaleError, ValueError):
    pass


class EmptyData(StiffscaleError, ValueError):
    pass


class InvalidRange(StiffscaleError, ValueError):
    pass


class NonFiniteLoss(StiffscaleError, ArithmeticError):
    pass


class FormatVersionMismatch(StiffscaleError, ValueError):
    pass


class CorruptCheckpoint(StiffscaleError, ValueError):
    pass


class UnstableConfig(StiffscaleError, ValueError):
    pass


class ZeroEnergy(StiffscaleError, ArithmeticError):
    pass


class DegenerateGrid(StiffscaleError, ValueError):
    pass


class ConfigError(StiffscaleError, ValueError):
    """Run configuration is invalid or references missing files."""
