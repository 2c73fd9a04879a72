"""Error taxonomy shared by all modules.

Plain ``ValueError`` is used for bad call inputs (out-of-vocabulary tokens,
mismatched lengths); the classes below mark failures that callers and the
CLI treat differently.
"""


class ConfigError(Exception):
    """Invalid configuration or hyperparameter value. CLI exit code 2."""


class NumericalError(Exception):
    """A non-finite value showed up where a finite one is required. CLI exit code 3."""
