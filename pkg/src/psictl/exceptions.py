"""Exception types shared across the toolkit.

Two broad families: `ValidationError` for inputs or configurations that
violate a documented precondition (caught early, before real work), and
`NumericalError` for computations that went bad at runtime (divergence,
loss of positivity). The command line maps the families to distinct
exit codes.
"""


class PsictlError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PsictlError):
    """An input, configuration, or problem definition breaks an invariant."""


class ParseError(ValidationError):
    """Malformed configuration text or polynomial expression."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotProportional(ValidationError):
    """B B^T and U R^-1 U^T are not scalar multiples of each other.

    The linearization of the control PDE requires noise to enter the
    dynamics in proportion to control authority; no valid lambda exists
    otherwise.
    """


class SingularWeight(ValidationError):
    """Control weight matrix is not invertible on the actuated inputs."""


class NoiseOnUncontrolled(ValidationError):
    """A state coordinate carries noise but no control authority."""


class NonQuadraticCost(ValidationError):
    """A cost term is not in the supported quadratic form."""


class CutoffTooSmall(ValidationError):
    """An operator shifts coefficients farther than the lattice extent."""


class StabilityViolation(ValidationError):
    """Requested time step violates the explicit-scheme stability bound."""


class OutOfDomain(ValidationError):
    """Query state lies outside (or too close to the edge of) the grid."""


class NumericalError(PsictlError):
    """A computation produced values that cannot be trusted."""


class NonFinite(NumericalError):
    """NaN or infinity appeared during integration."""


class Unstable(NumericalError):
    """Grid values blew up during time stepping."""


class DesirabilityUnderflow(NumericalError):
    """psi fell below the floor and the feedback gain is undefined.

    Attributes
    ----------
    states : ndarray or None
        The offending query states, one row per underflow.
    mask : ndarray of bool or None
        For batched queries, True on rows where psi underflowed.
    """

    def __init__(self, message, states=None, mask=None):
        super().__init__(message)
        self.states = states
        self.mask = mask
