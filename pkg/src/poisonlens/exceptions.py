"""Exception types shared across the package."""


class PoisonLensError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(PoisonLensError, ValueError):
    """Array shapes do not conform."""


class NotPositiveDefinite(PoisonLensError):
    """Cholesky factorisation failed even after jitter."""


class RankDeficient(PoisonLensError):
    """Design matrix does not have full column rank."""


class SingularSystem(PoisonLensError):
    """Regularised kernel system could not be solved."""


class NegativeCount(PoisonLensError, ValueError):
    """A count argument was negative."""


class ZeroKernel(PoisonLensError):
    """Kernel value underflowed to zero where a ratio is required."""


class EmptyDataset(PoisonLensError, ValueError):
    """Operation requires at least one sample."""


class InvalidConfig(PoisonLensError, ValueError):
    """Experiment configuration violates its invariants."""


class CollinearFeature(PoisonLensError):
    """Candidate column lies in the span of the existing design."""


class GeometryOutOfBounds(PoisonLensError, ValueError):
    """Trigger geometry does not fit inside the image."""


class ZeroCoefficient(PoisonLensError):
    """Coefficient vector is numerically zero; overlap undefined."""


class BadMagic(PoisonLensError):
    """IDX file magic number does not match the expected record type."""


class TruncatedFile(PoisonLensError):
    """IDX payload is shorter than its header promises."""


class CountMismatch(PoisonLensError):
    """Image and label files disagree on the sample count."""


class ParseError(PoisonLensError):
    """CSV dataset could not be parsed; message carries the line number."""


class GridMismatch(PoisonLensError, ValueError):
    """Signal length does not match the spectrum grid."""


class FitFailed(PoisonLensError):
    """Least-squares probe residual exceeded its configured ceiling."""


class StepDiverged(PoisonLensError):
    """Euler flow diverged; the step size is too large."""
