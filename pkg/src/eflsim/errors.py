"""Exception types shared across the simulator."""


class EflError(Exception):
    """Base class for all simulator errors."""


class ContractViolation(EflError):
    """An operation was called with arguments that break its contract."""


class ConfigError(EflError):
    """Invalid configuration (bad field value, unknown key, infeasible combo)."""


class DegenerateDataError(EflError):
    """A training set cannot support classification (e.g. a single label)."""


class DivergenceError(EflError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class DataFormatError(EflError):
    """A dataset file could not be parsed."""


class PartitionError(EflError):
    """A partition spec is infeasible for the given dataset."""


class SerializationError(EflError):
    """A model or message blob could not be decoded."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ChannelClosed(EflError):
    """Receive attempted on a closed, drained channel (protocol shutdown)."""


class ProtocolError(EflError):
    """The federation protocol was driven outside its state contract."""


def with_context(exc: EflError, context: str) -> EflError:
    """Same error type with a location prefix; keeps typed fields intact."""
    if isinstance(exc, DivergenceError):
        return DivergenceError(f"{context}: {exc}", exc.epoch)
    if isinstance(exc, SerializationError):
        return SerializationError(f"{context}: {exc}", exc.offset)
    return type(exc)(f"{context}: {exc}")
