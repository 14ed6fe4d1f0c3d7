"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`LddrError`
so the CLI can map failure classes onto exit codes.
"""


class LddrError(Exception):
    pass


class ConfigurationError(LddrError, ValueError):
    """Inconsistent configuration, weights, or model/engine pairing."""


class GeometryError(ConfigurationError):
    """A layer window does not fit its (padded) input."""


class WeightHashMismatch(ConfigurationError):
    pass


class InputError(LddrError, ValueError):
    """Bad data handed to an operation (empty lists, mixed landmark counts...)."""


class ParseError(InputError):
    """Malformed file content."""


class TruncationError(ParseError):
    pass


class UnsupportedVersionError(ParseError):
    pass


class ShapeMismatchError(ParseError):
    """File content parses but its declared dimensions are inconsistent."""


class NumericalError(LddrError, ArithmeticError):
    pass


class MetricError(LddrError, ValueError):
    """Degenerate ground truth (zero normalizer)."""
