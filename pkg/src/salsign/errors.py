"""Exception hierarchy shared across the toolkit."""


class SalsignError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SalsignError):
    """File is not well-formed JSON (or YAML for configs)."""


class RecordError(SalsignError):
    """Error tied to one record; ``record_id`` names it when known."""

    def __init__(self, message: str, record_id: str | None = None):
        self.record_id = record_id
        if record_id is not None:
            message = f"[{record_id}] {message}"
        super().__init__(message)


class SchemaError(RecordError):
    """Required field missing, unexpected field present, or wrong JSON type."""


class ValidationError(RecordError):
    """Well-formed record that violates a dataset invariant."""


class ConfigError(SalsignError):
    pass


class DomainError(SalsignError, ValueError):
    pass


class EmptyBatch(SalsignError, ValueError):
    pass


class MixedImages(SalsignError, ValueError):
    pass


class EmptyDenominator(SalsignError, ZeroDivisionError):
    pass


class NoPositives(SalsignError):
    pass


class DivergedLoss(SalsignError, FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
