"""Exception types shared across the package."""


class CodedSdfError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CodedSdfError):
    """A file does not conform to its documented format (bad magic, parse
    error, truncation, checksum mismatch, version/architecture mismatch)."""


class DegenerateGeometryError(CodedSdfError):
    """Geometry violates a validity invariant (zero-area triangle,
    zero-volume tet, non-watertight surface, degenerate alignment input)."""


class NumericError(CodedSdfError):
    """A numerical procedure failed (eigensolve anomaly, NaN loss, empty
    code)."""


class UsageError(CodedSdfError):
    """Bad command-line flags or configuration keys."""
