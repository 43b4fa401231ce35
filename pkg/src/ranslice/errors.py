"""Exception types shared across the package."""


class RansliceError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(RansliceError, ValueError):
    """A numeric input lies outside the domain of a formula."""


class ConstraintViolationError(RansliceError, ValueError):
    """An allocation violates a hard resource constraint."""


class InternalConsistencyError(RansliceError, ArithmeticError):
    """A closed form produced a value outside its admissible range."""


class InfeasibleRateError(RansliceError, ValueError):
    """A zero SNR cannot carry any payload."""


class SliceInfeasibleError(RansliceError):
    """No bandwidth in the admissible range meets the slice QoS floor.

    Parameters
    ----------
    slice_id : int
        Index of the offending slice.
    p_max : float
        Largest achievable success probability.
    pi_s : float
        Required floor.
    """

    def __init__(self, slice_id, p_max, pi_s):
        self.slice_id = slice_id
        self.p_max = p_max
        self.pi_s = pi_s
        super().__init__(
            f"slice {slice_id}: max success probability {p_max:.6g} < floor {pi_s:.6g}")


class SolverError(RansliceError, RuntimeError):
    """The conic solver failed numerically after a regularized restart."""


class SimulationError(RansliceError, RuntimeError):
    """A Monte-Carlo deployment could not be drawn."""


class ConfigError(RansliceError, ValueError):
    """Invalid experiment configuration.

    Parameters
    ----------
    path : str
        Dotted path of the offending field.
    message : str
        Human readable reason.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
