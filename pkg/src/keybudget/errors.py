"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ConvergenceError(RuntimeError):
    """A numerical routine stopped before reaching its tolerance."""


class CapTooSmallError(ConvergenceError):
    """Ruin mass leaks past the upper end of the budget grid."""


class ContractError(ValueError):
    """A component returned a value that violates its declared contract."""


class ConfigError(ValueError):
    """Invalid or unresolvable experiment configuration."""


class TrainingDivergedError(RuntimeError):
    """Policy-gradient training collapsed."""
