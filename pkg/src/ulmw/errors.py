"""Exception hierarchy shared by all ulmw modules."""


class ULMWError(Exception):
    """Base class for errors raised by ulmw."""


class InvalidSizeError(ULMWError, ValueError):
    pass


class StructuralError(ULMWError, ValueError):
    """Shapes, indices or state sets do not fit together."""


class CapacityError(ULMWError):
    """A size guard was exceeded; the computation would blow up."""


class DomainError(ULMWError, ValueError):
    pass


class PreconditionError(ULMWError):
    pass


class NonUniqueStationaryError(ULMWError):
    """The chain is reducible, so its stationary row is not unique."""


class PresetShapeError(ULMWError, ValueError):
    pass


class HorizonExceededError(ULMWError):
    """A mixing curve never dropped below the requested threshold."""


class ConvergenceError(ULMWError):
    """An eigensolver or iteration failed to converge."""
