"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, grid or estimator parameters."""


class SimulationError(RuntimeError):
    """A path simulation could not be completed."""


class DivergedPathError(SimulationError):
    """A simulated path produced a non-finite state.

    ``step`` is the 1-based index of the (fine) time step that produced the
    bad value, ``sample`` the index of the sample within its level and
    ``level`` the discretisation level, when known.  Estimators attach the
    per-level diagnostics gathered before the failure to ``diagnostics``.
    """

    def __init__(self, message, *, step=None, sample=None, level=None):
        super().__init__(message)
        self.step = step
        self.sample = sample
        self.level = level
        self.diagnostics = []

    def with_level(self, level):
        self.level = level
        return self


class NoiseIdentityError(SimulationError):
    """Checked mode found a coarse increment that is not the sum of the fine ones."""
