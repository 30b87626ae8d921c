"""Exception types shared across the package."""

from __future__ import annotations


class FormatError(ValueError):
    """A file or stream does not match its documented format.

    Messages name the offending line or field so callers can report
    actionable parse errors.
    """


class DecodeError(RuntimeError):
    """Decoding could not produce any viable hypothesis.

    Raised when the active masks (length bounds, n-gram blocking) together
    with the model's zero-probability tokens leave no candidate token at
    some step. The message names the constraints in effect.
    """
