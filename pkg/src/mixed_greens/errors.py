"""Exception hierarchy shared by all modules."""


class MixedGreensError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MixedGreensError, ValueError):
    pass


class DimensionError(MixedGreensError, ValueError):
    pass


class DomainError(MixedGreensError, ValueError):
    pass


class RangeError(MixedGreensError, ValueError):
    pass


class IntegrationBlowup(MixedGreensError, RuntimeError):
    pass


class NoConvergence(MixedGreensError, RuntimeError):
    pass


class DegenerateBVP(MixedGreensError, RuntimeError):
    """The boundary-value problem has a continuum of solutions (or none) because a
    conserved quantity is aligned with the representation."""


class FDStencilError(MixedGreensError, RuntimeError):
    pass


class CausticProximity(MixedGreensError, RuntimeError):
    pass


class QuadratureNoConvergence(MixedGreensError, RuntimeError):
    pass


class PoleProximity(MixedGreensError, ValueError):
    pass


class TruncationError(MixedGreensError, RuntimeError):
    pass
