"""Shared exception types."""


class InputError(ValueError):
    """Caller supplied an argument outside an operation's contract."""


class ConfigError(ValueError):
    """Experiment configuration failed to parse or validate."""


class SimulationError(RuntimeError):
    """An environment produced a non-finite cost or violated its contract."""


class SolverError(RuntimeError):
    """A linear system was singular or too ill-conditioned to solve."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition
