"""Exception hierarchy shared by all ablg modules.

Exit-code mapping used by the CLI: ConfigError -> 2, FormatError -> 4,
everything else derived from AblgError -> 3.
"""


class AblgError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AblgError):
    """Invalid configuration: bad shapes, unknown templates, malformed experiment files."""


class DomainError(AblgError):
    """An argument is outside the operation's documented domain."""


class BoundsError(DomainError):
    """An index (unit, layer, class) is out of range."""


class TrainingError(AblgError):
    """Training diverged or otherwise failed; carries the epoch it happened in."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class SingularFitError(AblgError):
    """Least-squares design matrix is rank deficient; names the dependent columns."""

    def __init__(self, columns: list[str]):
        super().__init__(f"design matrix is rank deficient, collinear column(s): {', '.join(columns)}")
        self.columns = columns


class UndefinedCorrelationError(DomainError):
    """Pearson correlation requested for a zero-variance vector."""


class FormatError(AblgError):
    """A binary file does not conform to its format; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
