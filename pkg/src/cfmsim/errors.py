"""Exception hierarchy shared by every module.

Each class carries the CLI exit code and the one-word category printed on
failure, so command-line errors stay machine-parseable.
"""


class CfmError(Exception):
    exit_code = 1
    category = "error"


class ConfigurationError(CfmError, ValueError):
    """Invalid parameters: sizes, levels, ranges, unsupported combinations."""

    exit_code = 6
    category = "config"


class LengthError(ConfigurationError):
    """A transform was handed a vector whose length it cannot process."""

    exit_code = 6
    category = "length"


class ShapeError(CfmError, ValueError):
    """Operands whose dimensions disagree."""

    exit_code = 5
    category = "dimension"


class FormatError(CfmError, ValueError):
    """A container or sidecar file that does not parse."""

    exit_code = 4
    category = "format"


class UnreadableFileError(CfmError, OSError):
    exit_code = 3
    category = "io"


class SolverError(CfmError, ArithmeticError):
    """Nonfinite inputs or iterates inside a solver."""

    exit_code = 7
    category = "solver"
