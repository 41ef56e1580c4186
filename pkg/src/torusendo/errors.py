"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit 2,
capacity problems exit 3, numerical failures exit 4.
"""


class TorusEndoError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TorusEndoError, ValueError):
    """Malformed or incomplete experiment configuration."""


class CapacityError(TorusEndoError):
    """An enumeration would exceed its configured node or point cap."""

    def __init__(self, message, requested=None, cap=None):
        super().__init__(message)
        self.requested = requested
        self.cap = cap


class NumericalError(TorusEndoError):
    """A numerical procedure failed (root finding, degeneracy, ...)."""


class BranchInverseError(NumericalError):
    """Root finding for a branch inverse did not converge."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch


class DegenerateError(NumericalError):
    """A vector or matrix collapsed to zero during propagation."""


class InvalidWeightingError(NumericalError):
    """Jacobian weights on a fiber do not sum to one."""


class CoverageError(NumericalError):
    """A fiber did not produce the expected number of preimages."""


class CosetSystemError(TorusEndoError):
    """A coset system is inconsistent (no valid symbol transition)."""


class InsufficientPrefixError(TorusEndoError, ValueError):
    """A solenoid prefix is too short for the requested operation."""


class PreconditionError(TorusEndoError, ValueError):
    """An operation was called outside its stated preconditions."""


class GrowthStalledError(NumericalError):
    """No expanding branch was found while growing a curve."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
