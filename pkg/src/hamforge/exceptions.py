"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`HamforgeError`.
The CLI maps the three families below onto exit codes 2 (config), 3 (data)
and 4 (numeric failure).
"""


class HamforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(HamforgeError, ValueError):
    """Invalid hyperparameters or command-line configuration."""


class DataError(HamforgeError, ValueError):
    """Malformed or missing input data."""


class NumericError(HamforgeError, ArithmeticError):
    """A computation produced non-finite or degenerate values."""


# --- chemistry / file formats ------------------------------------------------

class SmilesError(DataError):
    pass


class UnsupportedFeature(SmilesError):
    pass


class UnbalancedRingBond(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class HeaderMismatch(DataError):
    pass


class CountMismatch(DataError):
    pass


class MalformedLine(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedRecord(DataError):
    pass


class NoConformations(DataError):
    pass


class CheckpointMissing(DataError):
    pass


class TooSmall(DataError):
    pass


class ZeroVariance(DataError):
    pass


# --- numerics ----------------------------------------------------------------

class ShapeMismatch(NumericError, ValueError):
    pass


class NoConvergence(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class NonFinite(NumericError):
    """Raised when a rollout or training step produces inf/nan.

    ``step`` is the engine step (or ``None``) and ``item`` an optional
    molecule identifier.
    """

    def __init__(self, message, step=None, item=None):
        super().__init__(message)
        self.step = step
        self.item = item


class DegenerateOutput(NumericError):
    pass


class DegenerateGeometry(NumericError):
    pass


class UndefinedAUC(NumericError):
    pass


class WidthMismatch(ConfigError):
    pass


class UnknownVariant(ConfigError):
    pass
