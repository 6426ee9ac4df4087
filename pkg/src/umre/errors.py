"""Typed errors raised by the engine.

Every failure mode callers are expected to handle has its own class so the
service layer and CLI can map them to stable error kinds / exit codes.
"""


class EngineError(Exception):
    """Base class for all engine errors."""

    kind = "engine"


class DimensionMismatch(EngineError):
    kind = "dimension-mismatch"


class ZeroVector(EngineError):
    kind = "zero-vector"


class InvalidConfig(EngineError):
    kind = "invalid-config"


class EmptyBatch(EngineError):
    kind = "empty-batch"


class EmptyPool(EngineError):
    kind = "empty-pool"


class UnknownId(EngineError):
    kind = "unknown-id"


class NoPositives(EngineError):
    kind = "no-positives"


class NoJudgedQueries(EngineError):
    kind = "no-judged-queries"


class EmptyInput(EngineError):
    kind = "empty-input"


class QuotaExceedsSource(EngineError):
    kind = "quota-exceeds-source"


class InvalidSpec(EngineError):
    kind = "invalid-spec"


class DivergenceDetected(EngineError):
    kind = "divergence"


class ContainerFormatError(EngineError):
    """Base for embedding-container codec failures."""

    kind = "container-format"


class BadMagic(ContainerFormatError):
    kind = "bad-magic"


class VersionUnsupported(ContainerFormatError):
    kind = "version-unsupported"


class TruncatedFile(ContainerFormatError):
    kind = "truncated-file"


class DtypeUnsupported(ContainerFormatError):
    kind = "dtype-unsupported"


class NormalizationInvalid(ContainerFormatError):
    """Container claims normalized rows but a sampled row is not unit norm."""

    kind = "normalization-invalid"


class InputFormatError(EngineError):
    """Malformed manifest / qrels / record file. Carries a location when known."""

    kind = "input-format"

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class MissingInputFile(EngineError):
    kind = "missing-file"
