"""Exception types raised by critmass."""


class CritmassError(Exception):
    """Base class for all package errors."""


class InvalidParams(CritmassError, ValueError):
    """Parameters violate an admissibility condition."""


class DomainEscape(CritmassError):
    """A rescaled or sampled profile no longer fits the periodic box."""


class NoConvergence(CritmassError):
    pass


class ExponentMismatch(CritmassError, ValueError):
    pass


class ZeroField(CritmassError, ValueError):
    pass


class ZeroMass(CritmassError, ValueError):
    pass


class ZeroKinetic(CritmassError, ValueError):
    pass


class NotConverged(CritmassError):
    pass


class NumericalBlowup(CritmassError):
    """Non-finite values appeared during time stepping."""
