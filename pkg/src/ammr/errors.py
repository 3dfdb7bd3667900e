"""Exception types shared across the engine."""


class AmmrError(Exception):
    """Base class for all engine errors."""


class SchemaError(AmmrError):
    """Schema invariant violated, or a reference to an unknown slot/value."""


class FormatError(AmmrError):
    """Malformed record in a persistent file; carries line/column context."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", col {column})" if column is not None else ")")
        super().__init__(message + where)


class DimensionError(AmmrError):
    """Vector/matrix shapes or layouts do not agree."""


class BuildError(AmmrError):
    """Index construction rejected its inputs."""


class TrainError(AmmrError):
    """Training diverged (non-finite loss) or received invalid triplets."""


class ParseError(AmmrError):
    """Utterance produced no usable directives."""


class PlannerError(AmmrError):
    """A planner tool failed after its retries."""


class UnknownItemError(AmmrError):
    """A candidate or anchor id is not present in the catalog."""


class ConfigError(AmmrError):
    """Evaluation or experiment configuration is invalid."""


class DomainError(AmmrError):
    """Metric input outside its mathematical domain (e.g. all-zero counts)."""
