"""Exception hierarchy shared by all modules."""


class PincError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PincError, ValueError):
    """Invalid configuration value (sizes, ranges, bounds, counts)."""


class SchemaError(ConfigError):
    """Experiment config document does not match the schema.

    ``keys`` lists the offending dotted key paths.
    """

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)


class ContractError(PincError, ValueError):
    """A caller violated an operation precondition (shapes, lengths, seeds)."""


class DomainError(PincError, ValueError):
    """Non-finite input or output where finite values are required."""


class ConstructionError(PincError, TypeError):
    """Expression uses an operation the tape cannot record."""


class RegistryError(PincError, KeyError):
    """Unknown model name."""


class IntegrationError(PincError, ArithmeticError):
    """A rollout produced a non-finite state; ``step`` is the failing index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class TrainingDiverged(PincError, ArithmeticError):
    """Loss became non-finite; ``record`` holds iteration, phase and loss values."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record
