"""Exception types raised across the package."""


class NviError(Exception):
    """Base class for all package errors."""


class InvalidModel(NviError, ValueError):
    """A POMDP model violates its probability/discount invariants."""


class InvalidConfiguration(NviError, ValueError):
    """A domain or solver was configured with inconsistent parameters."""


class ZeroProbabilityObservation(NviError, ValueError):
    """The observation has probability zero under the belief and action."""


class EmptySet(NviError, ValueError):
    """An alpha-vector set is empty."""


class BudgetExceeded(NviError, RuntimeError):
    """An enumeration exceeded its configured node limit."""


class ObservationStarvation(NviError, RuntimeError):
    """Rejection sampling could not find particles consistent with an observation."""


class DimensionMismatch(NviError, ValueError):
    """Input width does not match the network's input dimension."""


class NonFiniteLoss(NviError, FloatingPointError):
    """Training loss became NaN or infinite."""


class EmptyController(NviError, ValueError):
    """A controller operation needs at least one node."""


class CorruptPolicy(NviError, ValueError):
    """A policy file or controller violates the controller invariants."""


class DomainMismatch(NviError, ValueError):
    """A policy file was produced for a different domain."""


class MalformedTrace(NviError, ValueError):
    """A bound-trace file cannot be parsed."""


class DegenerateInputWarning(UserWarning):
    """Fewer distinct samples than requested clusters."""
