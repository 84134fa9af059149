"""Exception hierarchy shared across the engine.

Exit-code mapping used by the CLI: DataError -> 2, TransportError -> 3,
usage problems -> 1.
"""

from __future__ import annotations


class RetrankError(Exception):
    """Base class for all engine errors."""


class DataError(RetrankError):
    """Invalid input data: malformed files, broken invariants, bad lookups."""


class EvecFormatError(DataError):
    """Corrupt or unreadable embedding file. Carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TransportError(RetrankError):
    """Network-level failure talking to the answer endpoint."""


class StatusError(TransportError):
    """Endpoint answered with a non-success HTTP status."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"endpoint returned status {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class EmptyCompletionError(TransportError):
    """Endpoint answered successfully but produced no text."""
