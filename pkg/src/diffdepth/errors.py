"""Exception types shared across the package."""


class DiffDepthError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(DiffDepthError, ValueError):
    """Operands have incompatible shapes."""


class EmptyMask(DiffDepthError, ValueError):
    """An operation that needs valid pixels received a mask with none."""


class DegenerateRange(DiffDepthError, ValueError):
    """Depth percentile window collapsed (near-constant depth)."""


class InvalidRange(DiffDepthError, ValueError):
    """Schedule parameters outside their admissible range."""


class InvalidCount(DiffDepthError, ValueError):
    """A count argument (steps, samples, iterations) is out of range."""


class NonMonotoneSteps(DiffDepthError, ValueError):
    """Sampling timesteps are not strictly decreasing."""


class NeedTwoMembers(DiffDepthError, ValueError):
    """Ensemble objective requires at least two members."""


class NonFiniteObjective(DiffDepthError, ArithmeticError):
    """Ensemble alignment objective became NaN or infinite."""


class SingularFit(DiffDepthError, ArithmeticError):
    """Least-squares alignment is singular (constant prediction)."""


class NonPositiveGroundTruth(DiffDepthError, ValueError):
    """Ground-truth depth must be strictly positive on valid pixels."""


class NonPositiveDepth(DiffDepthError, ValueError):
    """Depth must be strictly positive for unprojection."""


class DivergedLoss(DiffDepthError, ArithmeticError):
    """Training loss became non-finite."""


class MalformedFile(DiffDepthError, IOError):
    """A depth/image/checkpoint file failed to parse."""


class UnsupportedFormat(DiffDepthError, ValueError):
    """Requested file format is not one of the supported ones."""
