"""
Exception hierarchy for xbarsim.

Every error raised by the library derives from XbarSimError and from the
builtin exception a caller would naturally expect, so ``except ValueError``
keeps working for input and configuration problems.
"""


class XbarSimError(Exception):
    """Base class for all xbarsim errors."""


class ConfigurationError(XbarSimError, ValueError):
    """Invalid configuration, preset or device template."""


class InputError(XbarSimError, ValueError):
    """Invalid argument value or shape."""


class DomainError(InputError):
    """Argument outside the mathematical domain of a function."""


class RangeError(InputError):
    """Value outside its permitted range, such as a device target or a read voltage."""


class DegenerateInputError(InputError):
    """Input that collapses a range to a single point."""


class SingularFitError(XbarSimError, ValueError):
    """Least-squares fit with a constant regressor."""


class StateError(XbarSimError, RuntimeError):
    """Operation invoked in the wrong lifecycle state."""


class TrainingError(XbarSimError, RuntimeError):
    """Training diverged or could not proceed."""
