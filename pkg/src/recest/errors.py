"""Exception hierarchy shared by every module."""


class EstimationError(Exception):
    """Base class for numerical failures raised while running a recursion.

    ``step`` is filled in by the run loops with the 1-based step index at
    which the failure occurred (``None`` when raised outside a run).
    """

    def __init__(self, message: str = "", step: int | None = None):
        super().__init__(message)
        self.step = step

    def __str__(self) -> str:
        msg = super().__str__()
        if self.step is not None:
            return f"step {self.step}: {msg}"
        return msg


class SingularMatrix(EstimationError):
    pass


class DegenerateNormalizer(SingularMatrix):
    """Scalar normalizer fell below the singularity floor."""


class NonFiniteUpdate(EstimationError):
    pass


class PreconditionViolated(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class ZeroScale(ValueError):
    pass


class NonPositiveCg(ValueError):
    pass


class NonFiniteIntegrand(ArithmeticError):
    pass


class MaxDepthExceeded(ArithmeticError):
    pass


class ReplicationFailure(RuntimeError):
    """More than the allowed fraction of replications failed."""

    def __init__(self, n_failed: int, n_total: int):
        super().__init__(f"{n_failed} of {n_total} replications failed")
        self.n_failed = n_failed
        self.n_total = n_total


class InconsistentLinearStatistic(ArithmeticError):
    """Closed form and recursive form of the linear statistic disagree."""
