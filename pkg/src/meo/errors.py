"""Exception hierarchy shared across the observatory modules."""


class ObservatoryError(Exception):
    """Base class for all domain errors raised by this package."""


class ConfigError(ObservatoryError):
    """Invalid or unreadable configuration."""


class NotFoundError(ObservatoryError):
    """A referenced object (handle, raw object, seed, job) does not exist."""


class ThrottledError(ObservatoryError):
    """Rate limit exceeded; carries a retry-after hint in seconds."""

    def __init__(self, retry_after: float, message: str = "rate limit exceeded"):
        super().__init__(f"{message} (retry after {retry_after:.2f}s)")
        self.retry_after = retry_after


class RetryableError(ObservatoryError):
    """Transient upstream failure; the caller may retry."""


class InvalidPayloadError(ObservatoryError):
    """Payload bytes rejected before storage (empty or not valid JSON)."""


class NormalizationError(ObservatoryError):
    """A raw object could not be normalized; carries the quarantine reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class EligibilityRuleError(ObservatoryError):
    """No inclusion rule is defined for the requested platform."""


class MalformedRunError(ObservatoryError):
    """A crawl run record violates its structural invariants."""


class InsufficientDataError(ObservatoryError):
    """An analysis was requested over too little data to be meaningful."""


class AnalysisError(ObservatoryError):
    """An analysis input is degenerate (zero variance, zero baseline, ...)."""


class AbortPipeline(ObservatoryError):
    """Raised by stage hooks to interrupt a pipeline run mid-flight."""
