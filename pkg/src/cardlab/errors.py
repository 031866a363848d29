"""Exception types shared across the package."""

from __future__ import annotations


class CardlabError(Exception):
    """Base class for all cardlab errors."""


class ParseError(CardlabError):
    """Malformed input text (workload line, config file, or CSV cell)."""


class SchemaError(CardlabError):
    """Input data does not match the declared table schema."""


class ValidationError(CardlabError):
    """A query references objects missing from the database or catalog."""


class GenerationError(CardlabError):
    """Workload generation could not satisfy its constraints."""


class ModelFormatError(CardlabError):
    """Model file is corrupt, truncated, or from an incompatible version."""


class UsageError(CardlabError):
    """Bad command-line invocation."""
