"""Exception hierarchy for the slowfast package."""


class SlowFastError(Exception):
    """Base class for all errors raised by slowfast."""


class DomainExceeded(SlowFastError):
    """Evaluation or differentiation outside the valid part of a grid."""


class NumericalBreakdown(SlowFastError):
    """A non-finite value appeared where a finite one is required."""


class NewtonDiverged(SlowFastError):
    """Per-node Newton iteration failed to meet its tolerance."""


class IterationBudgetExceeded(SlowFastError):
    """A residual stagnated or grew before the requested depth was reached."""


class SingularA(SlowFastError):
    """The linearised fast operator is numerically singular on the whole grid."""


class SingularSylvester(SlowFastError):
    """A Sylvester/Lyapunov-type node equation has no unique solution."""


class FixedPointDiverged(SlowFastError):
    """Fixed-point projection did not contract."""


class StepSizeUnderflow(SlowFastError):
    """Adaptive integrator step size fell below the representable minimum."""


class InvalidSweep(SlowFastError):
    """Sweep data unusable for a log-log order fit."""


class InvalidParameters(SlowFastError, ValueError):
    """Preset or configuration parameters violate their constraints."""
