"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input array or scalar violates a documented precondition."""


class DegenerateStateError(ValueError):
    """A configuration cannot be normalized (e.g. a zero-norm row)."""


class ConstantsInvalidError(ValueError):
    """Closed-form constants fall outside the region where the bound is valid."""


class IntegrationDivergedError(RuntimeError):
    """A trajectory produced a non-finite value.

    The last finite state and its time are kept so callers can persist them.
    """

    def __init__(self, message, last_t=None, last_state=None, record=None):
        super().__init__(message)
        self.last_t = last_t
        self.last_state = last_state
        self.record = record


class InvariantViolationError(AssertionError):
    """Raised by self-check mode when a runtime invariant fails."""
