"""Exception types shared across the package."""


class ConlearnError(Exception):
    """Base class for all package errors."""


class DegenerateTrainingSet(ConlearnError):
    """All training points coincide; no reduced representation exists."""


class ZeroVarianceComponent(ConlearnError):
    """A coordinate of the learned set has zero sample variance."""


class MissingSurrogate(ConlearnError):
    """A nonzero multiplier was supplied without a surrogate model."""


class ChainDiverged(ConlearnError):
    """A sampler chain produced a non-finite or runaway state."""

    def __init__(self, chain, step, iteration=None):
        self.chain = int(chain)
        self.step = int(step)
        self.iteration = iteration
        where = f"chain {self.chain} at step {self.step}"
        if iteration is not None:
            where += f" (iteration {iteration})"
        super().__init__(f"sampler diverged: {where}")


class SingularHessian(ConlearnError):
    """The empirical covariance is numerically singular after regularization."""


class ZeroFirstIterationError(ConlearnError):
    """A block error is exactly zero at iteration 1, so it cannot normalize err(i)."""


class NonFiniteConstraint(ConlearnError):
    """The constraint function returned non-finite values."""


class BvpSolveFailure(ConlearnError):
    """A boundary-value-problem solve did not converge or was indefinite."""


class NotSpd(ConlearnError):
    """A matrix expected to be symmetric positive definite is not."""


class ConfigError(ConlearnError):
    """Invalid or inconsistent run configuration."""
