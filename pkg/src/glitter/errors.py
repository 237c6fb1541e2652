"""Exception types shared across the package."""


class GlitterError(Exception):
    """Base class; ``code`` is the short tag printed by the CLI."""

    code = "error"


class ConfigError(GlitterError, ValueError):
    code = "config"


class ParseError(GlitterError, ValueError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(GlitterError, ValueError):
    code = "validation"


class TrainingAborted(GlitterError, FloatingPointError):
    code = "training"
