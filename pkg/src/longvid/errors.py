"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents do not match the operation's contract."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class NumericError(ArithmeticError):
    """Non-finite or otherwise unusable numeric input."""


class ContractError(ValueError):
    """An operation was called in a way its contract forbids."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested computation (e.g. zero spread)."""


class ConditioningError(ValueError):
    """Condition tokens do not line up with the latent being denoised."""
