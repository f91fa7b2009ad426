"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid schedule, plan, dataset or experiment configuration."""


class DomainError(ValueError):
    """An operation was called outside its mathematical domain."""


class OptimizerError(RuntimeError):
    """Null-text optimization produced a non-finite loss."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (diffusion step {step})")
        self.step = step
