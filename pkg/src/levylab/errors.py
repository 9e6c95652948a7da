"""Exception types shared across levylab."""


class LevyLabError(Exception):
    """Base class for library errors."""


class NonConvergence(LevyLabError):
    """An iterative solver hit its iteration cap.

    The achieved residual is kept on the instance so callers can decide
    whether the result is usable anyway.
    """

    def __init__(self, message, residual=float("nan"), value=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
        self.value = value


class InfiniteMass(LevyLabError):
    """The Levy measure has infinite total mass where a finite one is needed."""


class ZeroTail(LevyLabError):
    """The Levy measure puts no mass above the requested threshold."""


class AtomicPi(LevyLabError):
    """A law that needs a diffuse Levy measure was asked of an atomic one."""


class QuadratureError(LevyLabError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=float("nan")):
        super().__init__(f"{message} (achieved abs error {achieved:.3e})")
        self.achieved = achieved


class MechanismError(LevyLabError, ValueError):
    """Invalid branching mechanism parameters or specification."""
