"""Exception hierarchy shared across the package."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed; the current computation cannot continue."""


class NotPositiveDefiniteError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class LanczosBreakdown(NumericalError):
    pass


class SizeGuardError(ValueError):
    """A dense computation was requested on a problem above the configured size limit."""


class ConfigError(ValueError):
    pass
