"""
Pipeline Exceptions
One hierarchy shared by the data, representation, agent and CLI layers
"""

from typing import Optional


class RIRLError(Exception):
    """Base class for every error raised by the profiling pipeline"""


class ConfigurationError(RIRLError, ValueError):
    """A configuration value or object shape is unusable"""


class ShapeError(RIRLError, ValueError):
    """Vector or matrix dimensions do not agree"""


class LookupFailure(RIRLError, KeyError):
    """An identifier is not known to the structure being queried"""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message instead
        return str(self.args[0]) if self.args else ""


class SchemaError(RIRLError, ValueError):
    """The knowledge-graph schema is missing a required link"""


class EmptyCorpusError(RIRLError, ValueError):
    """A source produced zero valid rows"""


class TooFewEventsError(RIRLError, ValueError):
    """A sequence is too short for the requested split"""


class InsufficientDataError(RIRLError, ValueError):
    """The replay buffer holds fewer transitions than requested"""


class NumericError(RIRLError, ArithmeticError):
    """A gradient or loss became non-finite"""


class DomainError(RIRLError, ValueError):
    """A value lies outside its mathematical domain (e.g. latitude > 90)"""


class UsageError(RIRLError, ValueError):
    """Invalid command-line flag or config-file entry"""


class TrainingStepError(RIRLError):
    """Wraps a module error with the training step it happened in"""

    def __init__(self, step: int, user_id: Optional[str], cause: Exception):
        self.step = step
        self.user_id = user_id
        self.cause = cause
        super().__init__(f"step {step} (user {user_id}): {type(cause).__name__}: {cause}")
