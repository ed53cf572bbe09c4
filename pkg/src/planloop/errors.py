"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "PlanloopError",
    "ParseError",
    "ValidationError",
    "NoRuleMatch",
    "UnparseableInstruction",
    "UnknownGoal",
    "PlanParseError",
    "EmptyPlanError",
    "SchemaError",
    "BackendError",
    "TransportError",
    "CassetteMiss",
    "AuthError",
    "ConfigError",
]


class PlanloopError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PlanloopError):
    """A structured document could not be parsed at all."""


class ValidationError(PlanloopError):
    """A parsed document or value violates a documented constraint."""


class NoRuleMatch(PlanloopError):
    """A grounded action falls outside the affordance table's domain."""


class UnparseableInstruction(PlanloopError):
    """No verb form of the instruction grammar was recognized."""


class UnknownGoal(PlanloopError):
    """A task references a goal id with no registered predicate."""


class PlanParseError(PlanloopError):
    """A model response could not be turned into a valid plan."""


class EmptyPlanError(PlanloopError):
    """No candidate plan reaches the goal within the search depth."""


class SchemaError(PlanloopError):
    """A serialized document does not match its declared schema."""

    def __init__(self, message: str, path: str = "") -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class BackendError(PlanloopError):
    """A reasoner or judge backend failed to produce usable output."""


class TransportError(PlanloopError):
    """The chat-completion transport failed after retries."""


class CassetteMiss(PlanloopError):
    """Replay mode found no recorded response for a request digest."""


class AuthError(PlanloopError):
    """Credentials for the live chat-completion endpoint are missing."""


class ConfigError(PlanloopError):
    """A run configuration is structurally invalid."""
