"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed or out-of-contract input (bad shapes, non-finite data, ...)."""


class ConfigurationError(ValueError):
    """Inconsistent hardware/tile/cost-table configuration."""


class CorruptionError(RuntimeError):
    """An internal invariant was violated (e.g. encoded index out of range)."""


class SimulationDeadlock(RuntimeError):
    """The event loop cannot make progress (e.g. a LUT bank can never load)."""

    def __init__(self, message, fifo_state=None):
        super().__init__(message)
        self.fifo_state = fifo_state or {}


class FunctionalMismatch(RuntimeError):
    """Timing-model output diverged from the functional reference."""

    def __init__(self, row, col, got, want):
        super().__init__(
            f"functional replay diverged at ({row}, {col}): got {got!r}, want {want!r}"
        )
        self.row = row
        self.col = col


class TrainingDiverged(RuntimeError):
    """Training loss exceeded the divergence bound; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
