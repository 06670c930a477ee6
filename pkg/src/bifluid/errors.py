"""Exception hierarchy shared across the solver modules.

The CLI maps these to process exit codes: configuration problems exit
with 2, solver non-convergence with 3, runtime invariant violations
with 4.  Everything else is a plain bug and propagates.
"""


class BifluidError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BifluidError):
    """Malformed or inconsistent run configuration."""


class NonConvergenceError(BifluidError):
    """An iterative solve exhausted its budget without meeting tolerance."""


class InvariantViolation(BifluidError):
    """A runtime bound that must hold analytically was observed broken."""


class ClosureDomainError(BifluidError, ValueError):
    """Closure operation evaluated outside its admissible domain.

    Carries the offending values so the caller can report which marker
    or grid node went bad.
    """

    def __init__(self, message: str, **values):
        self.values = dict(values)
        if values:
            detail = ", ".join(f"{k}={v!r}" for k, v in values.items())
            message = f"{message} ({detail})"
        super().__init__(message)
