# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Exceptions comfetch can raise."""


class BaseComfetchException(Exception):
    """The base of all comfetch exceptions."""
    pass


class ComfetchException(BaseComfetchException):
    """An exception raised by a comfetch function."""
    pass


class ContractViolation(ComfetchException):
    """An operation was called with arguments that break its preconditions.

    Shape mismatches, out-of-range counts, and non-finite inputs to the
    numeric core all end up here.

    """
    pass


class ConfigError(ComfetchException):
    """The experiment configuration couldn't be read or is invalid."""
    pass


class DataError(ComfetchException):
    """A dataset is malformed, or too small for what was asked of it."""
    pass


class NumericFailure(ComfetchException):
    """A computation produced non-finite values, and a round was rejected."""
    pass


class ReportError(ComfetchException):
    """A metrics file or report input couldn't be used."""
    pass


class StopEverything(BaseComfetchException):
    """An exception that means everything should stop.

    The test suite converts these to skips, so that when running tests,
    raising this exception will automatically skip the test.

    """
    pass


class ComfetchWarning(Warning):
    """A warning from comfetch."""
    pass
