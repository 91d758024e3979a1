"""Exception hierarchy mapped to CLI exit codes."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(PipelineError):
    """Invalid configuration: unknown key, bad value, missing path."""

    exit_code = 2


class DataError(PipelineError):
    """Malformed or inconsistent input data (manifests, epoch files, CSVs)."""

    exit_code = 3


class NumericalError(PipelineError):
    """Numerical failure: singular fits, non-convergence, undefined transforms."""

    exit_code = 4
