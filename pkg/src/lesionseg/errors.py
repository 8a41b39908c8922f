"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have shapes the operation cannot combine."""


class ConfigError(ValueError):
    """A configuration value (or combination) is invalid."""


class StateError(RuntimeError):
    """An object was used in a state that does not permit the operation."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or does not match the model."""


class ManifestError(RuntimeError):
    """A dataset manifest cannot be parsed."""


class IngestionError(RuntimeError):
    """A dataset row exists but its files cannot be loaded as described."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, lr: float, parts: dict):
        self.iteration = iteration
        self.lr = lr
        self.parts = parts
        terms = ", ".join(f"{k}={v}" for k, v in parts.items())
        super().__init__(
            f"non-finite loss at iteration {iteration} (lr={lr}): {terms}"
        )
