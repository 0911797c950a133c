class FedBacError(Exception):
    """Base class for simulator errors."""


class ConfigError(FedBacError, ValueError):
    """Invalid configuration or incompatible shapes."""


class InputError(FedBacError, ValueError):
    """Invalid argument value (empty data, out-of-range label, ...)."""


class ProtocolError(FedBacError, RuntimeError):
    """A protocol step received the wrong set of participants."""
