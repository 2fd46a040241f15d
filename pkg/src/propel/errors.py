"""Exception types shared across the package."""


class PropelError(Exception):
    pass


class ConfigError(PropelError, ValueError):
    """Bad configuration: unknown names, invalid keys or values."""


class ContractError(PropelError, ValueError):
    """A caller broke a precondition (shapes, ranges, NaNs)."""


class StateError(PropelError, RuntimeError):
    """Operation not valid in the object's current state."""


class VerificationError(PropelError):
    pass


class CheckpointError(PropelError, OSError):
    pass
