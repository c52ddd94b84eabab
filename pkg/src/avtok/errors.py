"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: validation problems exit 2, numeric
divergence exits 3 and file format or version problems exit 4.
"""


class AvtokError(Exception):
    exit_code = 1


class ValidationError(AvtokError, ValueError):
    exit_code = 2


class AlignmentError(ValidationError):
    """Face and speech token counts differ."""


class GrammarError(ValidationError):
    """A token sequence violates the stream grammar at ``position``."""

    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (position {position})")
        self.position = position


class NumericError(AvtokError, ArithmeticError):
    exit_code = 3


class FormatError(AvtokError):
    exit_code = 4


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass
