"""Exception taxonomy shared across the toolkit."""


class InputError(ValueError):
    """Rejected input: caller-supplied data violates an operation's contract."""


class StructuralError(RuntimeError):
    """Internal contract violation between components (stale cache, missing state)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
