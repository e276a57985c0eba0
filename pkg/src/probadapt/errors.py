"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument broke a documented precondition (shape, range, enum)."""


class DomainError(ValueError):
    """A numeric operation was applied outside its mathematical domain."""


class MissingClassError(ValueError):
    """A per-class computation found a class with no samples."""


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite during optimisation."""


class ConfigError(ValueError):
    """An experiment configuration document failed validation."""
