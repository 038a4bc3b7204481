"""Exception hierarchy shared by all modules.

Every domain error derives from :class:`ConvexInitError`, which the CLI maps
to exit status 1.
"""


class ConvexInitError(Exception):
    """Base class for domain errors."""


class ParameterError(ConvexInitError, ValueError):
    """An argument lies outside its admissible domain."""


class ShapeError(ConvexInitError, ValueError):
    """Array dimensions do not agree."""


class InfeasibleParametersError(ConvexInitError):
    """No valid initialisation exists for the requested fixed point."""


class DegeneratePropagationError(ConvexInitError):
    """Propagated variance collapsed to a non-positive value."""


class VariantError(ConvexInitError):
    """Operation is not defined for this network variant."""


class FormatError(ConvexInitError, ValueError):
    """A file does not follow the expected on-disk format."""


class TrainingDiverged(ConvexInitError):
    """The training loss became non-finite."""


class UnreachableLevelError(ConvexInitError):
    """No bracket for the requested level was found along a ray."""


class DegenerateLevelError(ConvexInitError):
    """The requested level does not exceed the minimum of the function."""
