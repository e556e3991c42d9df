"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Shapes of means, factors, or operators do not line up."""


class RankDeficiencyError(ValueError):
    """A noise-free update hit a singular innovation with conflicting data."""


class SingularCovarianceError(ValueError):
    """An operation required a nondegenerate covariance."""


class LinearizationError(RuntimeError):
    """Vector field or Jacobian produced NaN/Inf at a linearization point."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class DomainError(ValueError):
    """Evaluation time lies outside the problem domain."""


class UnknownProblemError(KeyError):
    """Requested registry name is not registered."""
