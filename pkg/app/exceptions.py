"""
Vectorsmith – Exception hierarchy.

Reverts are recoverable: the world restores its pre-call snapshot and the
caller gets an ExecutionRecord flagged as reverted. Everything else signals a
problem with inputs or configuration.
"""


class VectorsmithError(Exception):
    """Base class for all Vectorsmith errors."""


# ── Execution ─────────────────────────────────────────────────

class Revert(VectorsmithError):
    """A simulated transaction revert."""

    def __init__(self, reason: str = "reverted"):
        super().__init__(reason)
        self.reason = reason


class ProtocolMathError(Revert):
    """Protocol arithmetic failed; on-chain this reverts the transaction."""


class ZeroBalance(ProtocolMathError):
    def __init__(self, reason: str = "zero balance in invariant"):
        super().__init__(reason)


class NoConvergence(ProtocolMathError):
    def __init__(self, reason: str = "newton iteration did not converge"):
        super().__init__(reason)


# ── Inputs / configuration ────────────────────────────────────

class ConfigError(VectorsmithError):
    """Benchmark or run configuration is invalid."""

    def __init__(self, errors: list[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SpecValidationError(VectorsmithError):
    """An action candidate does not match the world it targets."""

    def __init__(self, action_id: str, errors: list[str]):
        self.action_id = action_id
        self.errors = list(errors)
        super().__init__(f"{action_id}: " + "; ".join(self.errors))


# ── Pipeline ──────────────────────────────────────────────────

class BudgetExhausted(VectorsmithError):
    """Too many reverted samples to reach the requested data-point budget."""


class InsufficientData(VectorsmithError):
    """Not enough data points to fit the requested surrogate."""


class MissingSurrogate(VectorsmithError):
    """An action in a vector has neither a fitted surrogate nor an exact summary."""


class NoFeasiblePoint(VectorsmithError):
    """Every sampled parameter vector violated the constraints."""
