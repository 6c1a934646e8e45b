"""Exception types raised across the package."""

from __future__ import annotations


class SamcheckError(Exception):
    """Base class for every error raised by this package."""


class TemplateSyntaxError(SamcheckError):
    """Malformed YAML. ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class EmptyTemplate(SamcheckError):
    """The text has no top-level mapping."""


class EmptyConfig(SamcheckError):
    """A prompt was requested for empty configuration text."""


class GatewayError(SamcheckError):
    pass


class CacheMiss(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, message: str, status: int | None = None, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"{message}: HTTP {status}: {body[:500]}" if status else message)


class InvalidAlpha(SamcheckError):
    pass


class EmptyCorpus(SamcheckError):
    pass


class NoEligibleParameter(SamcheckError):
    pass


class TruthPathMissing(SamcheckError):
    pass


class EmptyDataset(SamcheckError):
    pass


class ManifestError(SamcheckError):
    pass


class RuleBaseError(SamcheckError):
    pass
