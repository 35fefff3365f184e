"""Error taxonomy shared by the CLI and the library.

The CLI maps these onto exit codes: config 2, data 3, invariant 4.
Plain ValueError is used for programming-level misuse of the ops.
"""


class PfdlError(Exception):
    """Base class for errors the CLI knows how to report."""

    category = "internal"


class ConfigError(PfdlError):
    category = "config"


class DataError(PfdlError):
    category = "data"


class InvariantError(PfdlError):
    category = "invariant"
