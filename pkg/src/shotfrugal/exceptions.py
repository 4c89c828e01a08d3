"""Exception hierarchy shared by every module of the package."""


class ShotFrugalError(Exception):
    """Base class for all package errors."""


class SizeError(ShotFrugalError, ValueError):
    """A size argument (qubit count, eigenvalue count, ...) is out of range."""


class ShapeError(ShotFrugalError, ValueError):
    """Array or operator dimensions do not agree."""


class DistributionError(ShotFrugalError, ValueError):
    """Probabilities or weights do not define a valid distribution."""


class SpecificationError(ShotFrugalError, ValueError):
    """A loss specification is malformed."""


class BudgetError(ShotFrugalError, ValueError):
    """A shot budget is too small for the requested estimator."""


class DegreeError(ShotFrugalError, ValueError):
    """Not enough samples for a U-statistic of the requested degree."""


class NonTerminationError(ShotFrugalError, RuntimeError):
    """A sequential sampler exceeded its safety cap."""


class ConfigurationError(ShotFrugalError, ValueError):
    """Optimizer or experiment configuration is invalid."""
