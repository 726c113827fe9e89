"""Source locations and diagnostic types shared by the frontend and IR."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    """Position of a token or node: 1-based line and column."""

    file: str
    line: int
    column: int
    length: int = 1

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


UNKNOWN_SPAN = SourceSpan("<unknown>", 1, 1, 0)


class SteError(Exception):
    """Base for all diagnostics carrying a source span."""

    def __init__(self, message: str, span: SourceSpan = UNKNOWN_SPAN):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


class IllegalCharacter(SteError):
    pass


class UnexpectedToken(SteError):
    pass


class UnterminatedBlock(SteError):
    pass


class UnknownClause(SteError):
    pass


class TransformError(SteError):
    """Base for transformation failures."""


class NonCanonicalLoop(TransformError):
    pass


class UnsupportedTarget(TransformError):
    pass


class UnsupportedAccess(TransformError):
    pass


class MissingAccessClause(TransformError):
    pass


class PatternMismatch(TransformError):
    pass


class SteRuntimeError(SteError):
    """Raised by the interpreters: division by zero, index out of bounds."""


class ConfigError(Exception):
    pass


class DeadlockDetected(Exception):
    pass
