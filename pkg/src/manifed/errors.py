"""Exception hierarchy. Every error raised by this package derives from ManifedError
so callers (and the CLI) can map failures to categories."""


class ManifedError(Exception):
    """Base class for all package errors."""


class ParameterError(ManifedError, ValueError):
    """An argument or configuration value is invalid."""


class DomainError(ManifedError, ValueError):
    """Input lies outside the mathematical domain of an operation
    (antipodal sphere points, singular Grassmann log, zero variance, ...)."""


class FeasibilityError(ManifedError, ValueError):
    """A point or tangent vector violates a manifold constraint beyond tolerance."""


class UnsupportedOperation(ManifedError, NotImplementedError):
    """The requested operation is not available on this kernel."""


class ContractError(ManifedError, ValueError):
    """An interface contract was broken, e.g. aggregating streams with
    mismatched base points."""


class RunError(ManifedError, RuntimeError):
    """A failure inside a federated run, annotated with (round, step, agent)."""

    def __init__(self, message, t=None, k=None, agent=None):
        ctx = ", ".join(
            f"{name}={val}"
            for name, val in (("t", t), ("k", k), ("agent", agent))
            if val is not None
        )
        super().__init__(f"{message} [{ctx}]" if ctx else message)
        self.t = t
        self.k = k
        self.agent = agent


class DataFormatError(ManifedError, ValueError):
    """A dataset container or CSV file is malformed."""
