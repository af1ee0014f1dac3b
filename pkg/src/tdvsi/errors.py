"""Exception taxonomy shared across the package."""


class TdvsiError(Exception):
    """Base class for all package-specific errors."""


class NotBalanced(TdvsiError):
    """Matrix does not have balanced structure (equal diagonals, equal off-diagonals)."""


class ParseError(TdvsiError):
    """Input file is malformed."""


class ValidationError(TdvsiError):
    """Input parsed but violates a model invariant; message names the offending element."""


class NonPositiveFactor(TdvsiError):
    """Scaling factor must be > 0."""


class UnknownBus(TdvsiError):
    """Referenced bus or node does not exist in the model."""


class NotConverged(TdvsiError):
    """Power-flow iteration did not converge.

    Near the loadability limit this is expected behaviour, not a defect: the
    continuation machinery uses it as the stopping signal.
    """

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class BaseCaseDiverged(TdvsiError):
    """The continuation base point (lambda = 1) itself is unsolvable."""


class DeadChannel(TdvsiError):
    """Measured current is below the live-channel threshold on an expected phase."""


class WindowTooSmall(TdvsiError):
    """Not enough synchronized frames for the requested operation."""


class IllConditioned(TdvsiError):
    """The delta regression system lacks excitation (condition number above limit)."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ZeroLoadImpedance(TdvsiError):
    """Load impedance magnitude is zero; index undefined."""


class ZeroLoadPower(TdvsiError):
    """Load apparent power magnitude is zero; index undefined."""


class EmptyInput(TdvsiError):
    """Operation requires at least one element."""
