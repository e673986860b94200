"""Exception types shared across the package."""


class DataError(Exception):
    """Input data is malformed or inconsistent (files, manifests, volumes)."""


class NumericError(Exception):
    """A computation produced non-finite values."""
