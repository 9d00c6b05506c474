"""Exception hierarchy shared by every stage of the pipeline."""


class KsatError(Exception):
    """Base class for all library errors."""


class DomainError(KsatError, ValueError):
    """An argument lies outside the operation's domain (shape, range, size)."""


class ParseError(KsatError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DegenerateGraphError(KsatError):
    """No valid corrupted triple exists for some positive."""


class MissingIdentifierError(KsatError, KeyError):
    """An identifier referenced by a triple has no embedding."""

    def __init__(self, identifier):
        self.identifier = identifier
        super().__init__(identifier)

    def __str__(self):
        return f"no embedding for identifier {self.identifier!r}"


class DivergenceError(KsatError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class ConfigError(KsatError):
    """Invalid experiment configuration."""


STAGES = ("data", "knowledge", "compression", "training", "evaluation", "report")


class StageError(KsatError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage, cause):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage={stage}: {type(cause).__name__}: {cause}")
