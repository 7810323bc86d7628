"""Exception hierarchy shared by all modules."""


class StatexplainError(Exception):
    """Base class for package errors."""


class InputError(StatexplainError, ValueError):
    """An argument violates an operation's precondition."""


class FormatError(StatexplainError, ValueError):
    """A file on disk does not match its declared format."""


class ConfigurationError(StatexplainError, ValueError):
    """A required collaborator or setting is missing."""


class TrainingError(StatexplainError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ModelIntegrityError(StatexplainError, ValueError):
    """A tree ensemble violates its structural invariants."""


class ResourceError(StatexplainError, RuntimeError):
    """A request exceeds a hard computational limit."""


class DegenerateLabelWarning(UserWarning):
    """Training labels contain a single distinct action."""
