"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A neuron or training parameter is outside its valid range."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class StructuralError(ValueError):
    """A network description violates a structural precondition."""


class NumericFault(FloatingPointError):
    """A state variable became NaN or infinite during simulation."""


class TrainingError(RuntimeError):
    """Training diverged or was otherwise unable to proceed."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
