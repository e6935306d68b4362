"""Exception hierarchy shared by every latency module."""


class LatencyToolkitError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(LatencyToolkitError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class MalformedEncodingError(DomainError):
    """An architecture encoding is not a 6x5 one-hot matrix."""


class ShapeError(DomainError):
    """A tensor or feature vector has the wrong dimensions."""


class UnsupportedError(LatencyToolkitError):
    """The performance-counter interface cannot be used on this host."""

    def __init__(self, reason):
        super().__init__(f"performance counters unavailable: {reason}")
        self.reason = reason


class ParseError(LatencyToolkitError):
    """A file could not be parsed; `line` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(LatencyToolkitError):
    """Inputs parsed fine but are inconsistent with each other."""


class TrainingDivergenceError(LatencyToolkitError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class UsageError(LatencyToolkitError):
    """A caller asked for something this package does not offer."""
