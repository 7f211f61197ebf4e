"""Exception taxonomy shared across the package.

CLI exit codes: InvalidArgumentError / DatasetError -> 2,
OptimizationFailureError -> 3, BridgeError subclasses -> 4.
"""


class Zp3Error(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(Zp3Error, ValueError):
    """A precondition on an operation's arguments was violated."""


class DegenerateTimestepError(Zp3Error, ArithmeticError):
    """alpha_bar at the requested timestep makes the formula singular."""


class DatasetError(Zp3Error):
    """Dataset directory is missing files or inconsistent."""


class OptimizationFailureError(Zp3Error):
    """Scene optimization diverged (non-finite loss)."""


class BridgeError(Zp3Error):
    """Base class for external noise-predictor bridge failures."""


class BridgeTimeoutError(BridgeError):
    """The bridge backend did not reply within the configured timeout."""


class ProtocolError(BridgeError):
    """The bridge reply was malformed or had mismatched dimensions."""


class BackendError(BridgeError):
    """The bridge backend replied with an error status or non-finite data."""
