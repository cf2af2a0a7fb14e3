"""Exception hierarchy shared by every module of the package."""


class ValidationError(ValueError):
    """A model, configuration or argument violates a documented precondition."""


class InadmissibleActionError(ValidationError):
    """An action outside the constraint set K(s) was requested."""


class BoundaryOverrunError(ValidationError):
    """A flow was evaluated past the boundary hitting time t*(x)."""


class InvalidBoundError(ValidationError):
    """The declared intensity bound was exceeded during thinning."""


class InstanceTooLargeError(ValidationError):
    """An enumeration or expansion would exceed its configured cap."""


class CapExceededError(InstanceTooLargeError):
    """Reachable-set construction exceeded its node cap."""


class ExplosionError(RuntimeError):
    """A simulation produced more jumps than the explosion guard allows."""


class NoJumpReachableError(RuntimeError):
    """No jump mechanism can fire from the current state within the time guard."""


class ImpossibleEvidenceError(RuntimeError):
    """An observation has zero probability under the current belief."""
