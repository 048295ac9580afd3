"""Exception hierarchy. Every error carries a stable ``code`` string."""

from __future__ import annotations


class CrowdMatchError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", *, code: str | None = None):
        if code is not None:
            self.code = code
        super().__init__(message or self.code)


class ValidationError(CrowdMatchError, ValueError):
    """Malformed input; ``code`` names the violated constraint."""

    code = "INVALID"


class DuplicateIdError(CrowdMatchError):
    code = "DUPLICATE_ID"


class NotFoundError(CrowdMatchError, KeyError):
    code = "NOT_FOUND"

    def __str__(self) -> str:
        return Exception.__str__(self)


class StaleUpdateError(CrowdMatchError):
    code = "STALE_UPDATE"


class CursorInvalidatedError(CrowdMatchError):
    code = "CURSOR_INVALIDATED"


class UnknownCandidateError(CrowdMatchError):
    code = "UNKNOWN_CANDIDATE"


class AlreadyTerminalError(CrowdMatchError):
    code = "ALREADY_TERMINAL"


class LogIOError(CrowdMatchError, OSError):
    code = "IO_ERROR"


class CorruptLogError(CrowdMatchError):
    """Unreadable log record. ``offset`` is the byte offset of the bad line.

    ``state`` holds whatever was rebuilt from the intact prefix, if the
    caller was replaying.
    """

    code = "CORRUPT_LOG"

    def __init__(self, offset: int, reason: str, state=None):
        self.offset = offset
        self.reason = reason
        self.state = state
        super().__init__(f"corrupt log record at byte {offset}: {reason}")
