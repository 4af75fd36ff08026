"""Exception types shared across the package.

The CLI maps these onto process exit codes: schema/validation problems
exit with 3, numeric failures with 4.
"""


class SchemaError(ValueError):
    """A file or config does not conform to its declared schema."""


class NumericError(RuntimeError):
    """A numerical operation failed (factorization, singular system, ...)."""


class CapacityError(NumericError):
    """A size cap was exceeded; the message says how to subset."""


class SpatialAliasingWarning(UserWarning):
    """Fewer directions than spherical-harmonics coefficients requested."""
