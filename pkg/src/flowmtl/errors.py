"""Exception taxonomy shared by the library and the CLI.

Each error class carries the CLI exit code and a short machine-parseable
category used in the one-line error output.
"""


class FlowMtlError(Exception):
    exit_code = 1
    category = "error"


class DataFormatError(FlowMtlError):
    """Malformed input file: bad CSV schema, broken JSONL, empty flow."""

    exit_code = 3
    category = "data-format"


class ShapeError(FlowMtlError):
    """Tensor/architecture shape violation, e.g. a trunk collapsing to zero length."""

    exit_code = 4
    category = "shape"


class ConfigError(FlowMtlError):
    """Invalid or inconsistent configuration values."""

    exit_code = 4
    category = "config"


class NumericalError(FlowMtlError):
    """Non-finite values produced during training or a failed numerical check."""

    exit_code = 5
    category = "numerical"
