"""
Exception types for TP-VAE Core.
Each error also derives from the builtin it refines, so callers catching
ValueError / RuntimeError keep working.
"""

from typing import Optional


class TPVAEError(Exception):
    """Base class for all TP-VAE Core errors."""


class DimensionError(TPVAEError, ValueError):
    """Raised when vector or matrix shapes do not line up."""


class ParseError(TPVAEError, ValueError):
    """
    Raised when an embedding file cannot be decoded.

    Exactly one of ``offset`` (binary formats) or ``line`` (text formats)
    locates the problem.
    """

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.reason = message
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        elif line is not None:
            message = f"{message} (at line {line})"
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.reason, self.offset, self.line))


class SamplingError(TPVAEError, ValueError):
    """Raised when a dataset cannot supply the requested episode."""

    def __init__(self, message: str, class_id: Optional[int] = None, episode_index: Optional[int] = None):
        self.class_id = class_id
        self.episode_index = episode_index
        super().__init__(message)

    def __reduce__(self):
        # keep the attributes when raised inside a worker process
        return (type(self), (self.args[0], self.class_id, self.episode_index))

    def with_episode(self, episode_index: int) -> "SamplingError":
        """Return a copy that names the episode it happened in."""
        return SamplingError(f"episode {episode_index}: {self}", self.class_id, episode_index)


class NumericalError(TPVAEError, RuntimeError):
    """Raised when a loss term or gradient becomes non-finite."""

    def __init__(self, message: str, term: Optional[str] = None):
        self.term = term
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.args[0], self.term))


class OracleError(NumericalError):
    """Raised by the finite-difference oracle on non-finite evaluations."""
