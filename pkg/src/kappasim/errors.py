"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data or configuration violates a documented contract.

    The CLI maps this to exit code 2 (data/validation error), as opposed
    to usage errors (exit 1) and numeric failures (exit 3).
    """
