"""Exception and warning types shared across the package."""


class QStateError(Exception):
    """Base class for all library errors."""


class TailTooHeavy(QStateError):
    """Truncation would discard more probability than allowed."""

    def __init__(self, tail_weight: float, tol: float = 1e-8, what: str = "state"):
        self.tail_weight = float(tail_weight)
        self.tol = tol
        super().__init__(
            f"{what}: truncation discards {tail_weight:.3e} probability (limit {tol:.1e})"
        )


class InvalidSpec(QStateError):
    """Malformed state specification."""


class DimensionMismatch(QStateError):
    """Two objects that must share a dimension do not."""


class SeriesDiverges(QStateError):
    """A weighted photon-number series has weights of modulus above one."""


class DeconvolutionRefused(QStateError):
    """Ordering change requested in the unstable (deconvolving) direction."""


class TruncationOverflow(QStateError):
    """Input occupies Fock layers that the output truncation cannot hold."""


class GridTooNarrow(QStateError):
    """Grid does not extend far enough beyond the classical turning points."""


class EtaOutOfRange(QStateError):
    """Efficiency outside the range where the requested kernel is bounded."""


class NotConverged(QStateError):
    """A truncated series failed its convergence monitor."""


class UnstableRequest(QStateError):
    """Requested ordering parameter amplifies noise without bound."""


class InsufficientPhaseCoverage(QStateError):
    """Measured phases do not cover the half circle densely enough."""


class PhaseDeficit(QStateError):
    """Too few distinct phases for an exact estimator."""


class ZRangeTooShort(QStateError):
    """Characteristic function not sampled far enough to have decayed."""


class IllConditioned(QStateError):
    """A linear system is too close to singular."""

    def __init__(self, message: str, condition: float):
        self.condition = float(condition)
        super().__init__(f"{message} (condition number {condition:.3e})")


class NearSingular(IllConditioned):
    """Normal matrix of a least-squares problem is numerically singular."""


class AllModesCut(QStateError):
    """Every singular component fell below the pseudoinverse cutoff."""


class SolverDiverged(QStateError):
    """Iterative solver failed; carries the iterate trace."""

    def __init__(self, message: str, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class EmptyPhase(QStateError):
    """A phase record has no samples."""


class DegenerateFrequencies(QStateError):
    """Probe frequencies coincide on the reconstruction support."""


class KernelTruncationTooLow(QStateError):
    """Phase-moment kernel summed over fewer terms than the state support."""


class InstabilityWarning(UserWarning):
    """Inversion is in the error-amplifying regime."""


class PhaseDeficitWarning(UserWarning):
    """Fewer phases than needed for all requested off-diagonals."""


class SeriesRisk(UserWarning):
    """Phase-space series weights do not decay."""


class WindowTooShort(UserWarning):
    """Probe window too short for the asymptotic projection."""


class FlatCurve(UserWarning):
    """L-curve has no pronounced corner."""
