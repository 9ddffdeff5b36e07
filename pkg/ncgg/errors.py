"""Exception types raised by the solvers and experiment harness."""


class NcggError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(NcggError, ValueError):
    """Input violates a documented precondition or invariant."""


class UnknownAgentError(NcggError, KeyError):
    """An agent id does not exist in the game instance."""

    def __str__(self):
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class ResourceLimitError(NcggError, RuntimeError):
    """A table or enumeration would exceed its configured size budget."""


class ConvergenceError(NcggError, RuntimeError):
    """Best-response dynamics did not converge within the round budget."""
