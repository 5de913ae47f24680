"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GatedKGError(Exception):
    """Base class for all package errors."""


class EmptyEntity(GatedKGError, ValueError):
    pass


class FormatError(GatedKGError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class GraphFrozen(GatedKGError, RuntimeError):
    pass


class EmptyQuery(GatedKGError, ValueError):
    pass


class SchemaError(GatedKGError, ValueError):
    """Provider output did not have the expected structure."""


class ProviderError(GatedKGError, RuntimeError):
    """Remote provider failure.

    ``kind`` is one of ``timeout``, ``status``, ``transport``, ``exhausted``.
    """

    KINDS = ("timeout", "status", "transport", "exhausted")

    def __init__(self, kind: str, message: str, *, status: int | None = None, attempts: int = 0) -> None:
        if kind not in self.KINDS:
            raise ValueError(f"unknown ProviderError kind {kind!r}")
        self.kind = kind
        self.status = status
        self.attempts = attempts
        super().__init__(f"[{kind}] {message}")


class NoEntryNodes(GatedKGError, LookupError):
    pass


class InvalidPath(GatedKGError, ValueError):
    pass


class DanglingSnippet(GatedKGError, LookupError):
    pass


class TemplateError(GatedKGError, ValueError):
    pass


class DegenerateScale(GatedKGError, ArithmeticError):
    pass
