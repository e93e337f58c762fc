"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """A game, learner or experiment was configured inconsistently."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericFaultError(FloatingPointError):
    """A non-finite action, utility or parameter was produced.

    ``index`` is the offending trajectory (or iteration) index when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class ConvergenceError(RuntimeError):
    """An iterative numerical routine did not reach its tolerance."""


class MemoryBudgetError(MemoryError):
    """The verifier tree would not fit into the configured memory budget."""

    def __init__(self, required_bytes, available_bytes):
        super().__init__(
            f"verifier tree needs ~{required_bytes / 2**20:.1f} MiB, "
            f"budget is {available_bytes / 2**20:.1f} MiB"
        )
        self.required_bytes = int(required_bytes)
        self.available_bytes = int(available_bytes)
