"""Exception hierarchy shared by all modules."""


class MECBanditError(Exception):
    """Base class for package errors."""


class ConfigError(MECBanditError, ValueError):
    """Invalid configuration or instance parameters.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DegenerateInstanceError(ConfigError):
    """A reward gap that must be strictly positive is zero."""


class InfeasibleError(MECBanditError, ValueError):
    """No assignment satisfies the capacity constraints."""


class InstanceTooLargeError(MECBanditError, ValueError):
    """Instance exceeds the size guard of an exhaustive solver."""


class SimulationError(MECBanditError, RuntimeError):
    """A simulation replica failed."""
