from typing import Optional


class TrollRankError(Exception):
    """
    Base class for every failure the toolkit reports to the command line.

    Attributes:
        exit_code (int): The process exit status the CLI returns for this error.
        stage (str, optional): Pipeline stage the error was raised in, set by the pipeline runner.
    """

    exit_code: int = 4
    stage: Optional[str] = None

    def describe(self) -> str:
        """One-line message, prefixed with the stage when one is known."""
        return f"stage '{self.stage}': {self}" if self.stage else str(self)


class ConfigError(TrollRankError):
    """Invalid configuration or command-line arguments."""

    exit_code = 2


class DataError(TrollRankError):
    """Input data or an inter-stage artifact could not be used."""

    exit_code = 3


class CorpusIOError(DataError):
    """The corpus source could not be opened or read."""


class CorpusFormatError(DataError):
    """More than half of the corpus lines were malformed."""


class RegistryFormatError(DataError):
    """
    A troll registry line could not be parsed.

    Attributes:
        line_number (int): 1-based number of the offending line.
    """

    def __init__(self, line_number: int, line: str):
        self.line_number = line_number
        self.line = line
        super().__init__(f"Unparseable troll registry line {line_number}: {line!r}")


class ArtifactError(DataError):
    """An artifact written by an earlier stage is missing or corrupt."""


class StageFailure(TrollRankError):
    """
    A pipeline stage aborted.

    Attributes:
        stage (str): Name of the stage that failed.
        cause (BaseException): The underlying exception.
    """

    exit_code = 4

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause}")


class EmptyCascadeError(ValueError):
    """A flow graph was requested for a cascade without retweeters."""


class ViralityDomainError(ValueError):
    """Structural virality is undefined for trees with fewer than two nodes."""


class OracleSizeError(ValueError):
    """The brute-force Shapley oracle refuses graphs above its node limit."""
