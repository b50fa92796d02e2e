"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration or geometry (CLI exit code 1)."""


class NumericError(RuntimeError):
    """Numerical failure: factorization, non-convergence (CLI exit code 2)."""


class SampleFailure(NumericError):
    """A single stochastic sample failed; the caller may resample."""
