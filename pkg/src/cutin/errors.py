"""Exception hierarchy shared across the package."""


class CutinError(Exception):
    """Base class for every error raised by this package."""


class ParseError(CutinError, ValueError):
    """Malformed manifest or observation table.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(CutinError, ValueError):
    """Well-formed input that violates a domain invariant."""


class ConfigurationError(CutinError, ValueError):
    """Invalid configuration: ratios, pools, image sizes, empty sets."""


class InputError(CutinError, ValueError):
    """Bad arguments at call time (non-finite costs, wrong sequence length)."""


class NumericalError(CutinError, ArithmeticError):
    """Non-finite intermediate values or singular matrices."""


class LabelingError(CutinError):
    """A track cannot be labeled (it never reaches the safety field)."""


class GenerationError(CutinError):
    """The synthetic generator could not satisfy the requested label."""
