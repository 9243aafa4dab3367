# core/errors.py
"""Exception hierarchy. Per-item failures (an infeasible QP step, a tracking
failure) are returned as status fields instead; these are for the hard stops."""


class PickPlaceError(Exception):
    exit_code = 1


class InputError(PickPlaceError, ValueError):
    """Bad file, argument or precondition supplied by the caller."""

    exit_code = 2


class InitializationError(PickPlaceError):
    """No collision-free seed configurations could be sampled."""


class SceneGenerationError(PickPlaceError):
    """Rejection sampling ran out of retries."""


class BinExhausted(PickPlaceError):
    """The guidance field has nothing to attract toward in the requested bin."""

    def __init__(self, bin_name: str):
        super().__init__(f"bin exhausted: {bin_name}")
        self.bin_name = bin_name


class ProtocolError(PickPlaceError):
    """External guidance field handshake, timeout or malformed message."""


class InvariantViolation(PickPlaceError):
    exit_code = 3
