"""Exceptions shared by the command-line pipeline."""


class UsageError(Exception):
    """Bad command line, config key, or grid specification."""


class MissingStageError(Exception):
    """A pipeline stage was requested before its prerequisite stage ran."""


class NumericalError(Exception):
    """Training diverged or a numerical check failed."""
