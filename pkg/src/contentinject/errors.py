"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command line maps it to.
"""


class ContentInjectError(Exception):
    exit_code = 1


class ConfigError(ContentInjectError, ValueError):
    """Invalid configuration value; the message names the offending field."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(ContentInjectError, ValueError):
    """A runtime pre/post-condition was violated (shapes, ordering, missing data)."""

    exit_code = 3


class DegenerateInputError(ContractError):
    """Input is geometrically or statistically degenerate (zero norm, zero variance, ...)."""


class NumericalError(ContentInjectError, ArithmeticError):
    """Non-finite values appeared during computation."""

    exit_code = 4
