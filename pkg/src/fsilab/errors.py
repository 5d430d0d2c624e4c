"""Exception types shared across the package."""


class FsiError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(FsiError):
    """A coefficient matrix that must be SPD is not."""


class EmptySampleSet(FsiError):
    """Certification was asked to run on an empty sample set."""


class BadGeometry(FsiError):
    """Invalid radii or mesh size for the disc/annulus geometry."""


class UnknownTag(FsiError):
    """Unknown subdomain or boundary tag."""


class DegenerateCoefficient(FsiError):
    """The viscous coefficient form lost ellipticity at a quadrature point."""


class MapDegenerate(FsiError):
    """The flow map left the small-data regime (Jacobian or ellipticity floor)."""


class SolverFailure(FsiError):
    """A linear solve failed or produced non-finite values."""


class CouplingResidualExceeded(FsiError):
    """Interface transmission residual exceeded its tolerance."""


class InsufficientHistory(FsiError):
    """Not enough stored states for a finite-difference stencil."""


class InsufficientData(FsiError):
    """Not enough records for a fit."""


class ConfigError(FsiError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """Malformed or unknown-key configuration input."""


class ValidationError(ConfigError):
    """Structurally valid configuration violating invariants."""
