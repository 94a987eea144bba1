"""Exception hierarchy. Every error raised by the library derives from QcertError."""


class QcertError(Exception):
    """Base class for all qcert errors."""


class InvalidParametersError(QcertError):
    """Arguments violate a documented precondition."""


class LengthMismatchError(QcertError):
    """Two bit sequences that must have equal length do not."""


class DegenerateGroupError(QcertError):
    """Requested group collapses to a single repeated state (m = s)."""


class SearchLimitError(QcertError):
    """Exact search requested beyond the configured size limit."""


class NotPsdError(QcertError):
    """A matrix required to be positive semidefinite is not, beyond tolerance."""


class DimensionLimitError(QcertError):
    """Outcome space too large for exact enumeration."""


class PartialGroupingError(QcertError):
    """An outcome grouping does not cover every outcome label."""


class StrategyLimitError(QcertError):
    """Adversarial strategy count exceeds the configured limit."""

    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(
            f"strategy count {count} exceeds limit {limit}; "
            "coarse-grain the outcomes first or raise the limit"
        )


class SdpInputError(QcertError):
    """Malformed semidefinite program (dimension or symmetry violation)."""


class DimensionMismatchError(QcertError):
    """Solution dimensions do not match the problem."""


class UncertifiedError(QcertError):
    """A dual certificate could not be verified; no rigorous bound available."""


class InfeasibleTableError(QcertError):
    """Observed statistics are incompatible with the declared state overlaps."""


class UnsupportedDimensionError(QcertError):
    """Brute-force oracle only supports two-input (two-dimensional) instances."""


class NoFeasibleAttackError(QcertError):
    """Oracle grid too coarse to reproduce the observed statistics."""


class InsufficientEntropyError(QcertError):
    """Requested extraction length is non-positive."""


class OptimizationAbortedError(QcertError):
    """A grid point failed during parameter optimization; partial results attached."""

    def __init__(self, message: str, partial=None):
        self.partial = partial if partial is not None else []
        super().__init__(message)
