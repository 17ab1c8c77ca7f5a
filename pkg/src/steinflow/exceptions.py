class NumericalFailure(RuntimeError):
    """A solver, factorization or particle update produced an unusable result."""


class ConfigError(ValueError):
    """The run configuration is malformed or references something unresolvable."""
