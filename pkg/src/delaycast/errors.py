"""Exception types shared across the package."""


class DelaycastError(Exception):
    """Base class; ``code`` is the machine-readable tag the CLI reports."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class IntegrationError(DelaycastError):
    """An integrator gave up. ``last_time`` is the last successfully reached time.

    ``partial`` holds the samples produced before that time, when available.
    """

    code = "integration_failure"

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time
        self.partial = None

    def to_dict(self):
        d = super().to_dict()
        d["last_time"] = self.last_time
        return d


class EmbeddingError(DelaycastError):
    code = "embedding_error"


class NoMinimumError(EmbeddingError):
    code = "no_minimum"


class DegenerateSeriesError(DelaycastError):
    code = "degenerate_series"


class TrainingError(DelaycastError):
    """Training aborted; ``epoch`` and ``batch`` locate the failure."""

    code = "training_failure"

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

    def to_dict(self):
        d = super().to_dict()
        d.update(epoch=self.epoch, batch=self.batch)
        return d


class FormatError(DelaycastError):
    """A persisted artifact is malformed, truncated or of a foreign version."""

    code = "format_error"


class ChecksumError(FormatError):
    code = "checksum_mismatch"


class ShapeError(DelaycastError, ValueError):
    code = "shape_mismatch"


class ArtifactError(DelaycastError):
    """A pipeline artifact is missing, modified, or belongs to another config."""

    code = "artifact_error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        d = super().to_dict()
        d.update(self.details)
        return d


class ConfigError(DelaycastError):
    code = "config_invalid"
