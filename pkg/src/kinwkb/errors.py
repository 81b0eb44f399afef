"""Exception hierarchy.

Errors fall in three families that the command line maps to exit codes:
configuration problems (2), numerical failures (3) and oracle mismatches (4).
"""


class KinwkbError(Exception):
    """Base class for all package errors."""


class ConfigError(KinwkbError):
    pass


class NumericalError(KinwkbError):
    pass


class OracleMismatch(KinwkbError):
    pass


# chart / model problems
class ChartError(NumericalError):
    pass


class OutOfChart(ChartError):
    pass


class NonPositiveDefinite(ChartError):
    pass


class UnsupportedVariant(KinwkbError):
    pass


# integration and solves
class StepFailure(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class DegenerateTime(NumericalError):
    pass


class ConstraintViolated(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class TruncationTooTight(NumericalError):
    pass


class StencilOutOfDomain(NumericalError):
    pass


# symbolic engine
class ResonantMode(NumericalError):
    pass


class NonHomogeneousInput(NumericalError):
    pass


# stochastic oracle
class PathOutOfChart(NumericalError):
    pass


class InsufficientSamples(NumericalError):
    pass
