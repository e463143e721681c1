"""Exception hierarchy shared across the package."""


class TumorFuseError(Exception):
    pass


class DimensionError(TumorFuseError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(TumorFuseError, ValueError):
    """A caller violated an operation's precondition."""


class EvaluationError(TumorFuseError, ArithmeticError):
    """A function produced a non-finite value where a finite one was required."""


class NonFiniteGradientError(EvaluationError):
    pass


class EstimationError(TumorFuseError, ValueError):
    """Not enough data to estimate a statistic (e.g. a decision template)."""


class SplitError(TumorFuseError, ValueError):
    pass


class DivergenceError(TumorFuseError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, branch: str, step: int, value: float):
        super().__init__(f"branch {branch!r} diverged at step {step}: loss={value}")
        self.branch = branch
        self.step = step
        self.value = value


class ConfigError(TumorFuseError, ValueError):
    pass


class CheckpointError(TumorFuseError, ValueError):
    pass
