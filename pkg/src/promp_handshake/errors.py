"""Exception hierarchy shared by all modules."""


class HandshakeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HandshakeError, ValueError):
    """Input data or configuration violates a documented contract."""


class ParseError(ValidationError):
    """A skeleton file could not be parsed.

    ``line`` is the 1-based line number where parsing failed, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(ValidationError):
    pass


class ContractError(ValidationError):
    pass


class ExtractionError(ValidationError):
    """Skeleton geometry is degenerate (coincident joints, too few frames)."""


class LoadError(ValidationError):
    """A serialized artifact has the wrong version or inconsistent shapes."""


class PipelineError(ValidationError):
    pass


class SegmentationRejected(HandshakeError):
    """A recording was rejected during reach-phase segmentation.

    Not a failure of the code: ``reason`` is one of ``"no movement"``,
    ``"no grasp"``, ``"left-hand"``, ``"too short"``, ``"tracking gap"``.
    """

    def __init__(self, reason, detail=""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class NumericalError(HandshakeError, ArithmeticError):
    pass
