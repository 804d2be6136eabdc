"""Exception types raised by the slicewave library."""


class SliceWaveError(Exception):
    """Base class for all slicewave errors."""


class GeometryError(SliceWaveError):
    """A leaf is not a valid space-like hypersurface.

    Carries the first offending site index in ``site`` when known.
    """

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class SingularOperatorError(SliceWaveError):
    """The mode operator would be singular (mass <= 0 with a zero mode)."""


class SpectrumError(SliceWaveError):
    """An operator spectrum violates its expected bounds."""


class NodeError(SliceWaveError):
    """The trajectory hit (or came too close to) a node of the wave functional."""


class StepUnderflowError(SliceWaveError):
    """The field increment per step exceeds its bound even after bisection."""


class DegenerateFlowError(SliceWaveError):
    """The stress-energy tensor has no time-like eigenvector (null flux)."""


class FoliationCollapseError(SliceWaveError):
    """Advancing the foliation produced intersecting / non-space-like leaves."""

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class ConfigError(SliceWaveError):
    """A run configuration is malformed or violates an invariant."""


class UnsupportedConfigError(ConfigError):
    """A structurally valid configuration requests an unsupported mode."""
