"""Exception and warning types shared across the package."""


class MjsError(Exception):
    """Base class for all numerical/validation failures raised by this package."""


# --- model construction -------------------------------------------------

class EnergyBelowPotential(MjsError):
    """Mechanical pair requested at an energy E with E - V <= 0 somewhere."""


class DegenerateMetric(MjsError):
    """Co-metric failed the positive-definiteness check on the sample grid."""


class NegativeDepth(MjsError):
    """Water-wave depth profile is nonpositive somewhere on the sample grid."""


class MjcDefectAboveTolerance(MjsError):
    """Strict-mode conformal-pair construction found |calH - calE| above tolerance."""


class SurfaceNotFound(MjsError):
    """No energy-surface root found on any sampled momentum ray."""


class MultiplierSingular(MjsError):
    """Multiplier undefined: on-surface point with vanishing H-gradient."""


class FluxOutOfRange(MjsError):
    """Randers flux parameter must satisfy 0 <= alpha < 1."""


# --- flows ---------------------------------------------------------------

class StepRejected(MjsError):
    """Integrator produced a non-finite state (singular field or bad step)."""


class EnergyDriftExceeded(MjsError):
    """Checked integration exceeded its energy-conservation budget."""


class NotOnSurface(MjsError):
    """Point or trajectory does not lie on the required energy surface."""


class FieldsNotParallel(MjsError):
    """Hamiltonian fields are not proportional at the requested point."""


class InsufficientWinding(MjsError):
    """Trajectory too short to estimate a rotation vector reliably."""


class LoopNotClosed(MjsError):
    """Action integral requested over a non-closed loop."""


# --- KAM profiles --------------------------------------------------------

class ImplicitSolveFailed(MjsError):
    """Newton continuation for the rotation profile failed or is ill-posed."""


class ProfileNotMonotone(MjsError):
    """f' is not monotone, so interval pullback is unavailable.

    Attributes carry the grid-based fallback so callers still get a mask:
    ``mask`` (the KamMask built with grid-counted measure) is attached.
    """

    def __init__(self, message, mask=None):
        super().__init__(message)
        self.mask = mask


class GridTooCoarse(MjsError):
    """Grid spacing too coarse for the requested stencil or resolution."""


class NondegeneracyViolated(UserWarning):
    """Twist f''(0) numerically zero; counts and dimensions are unreliable."""


# --- normal forms --------------------------------------------------------

class SmallDivisor(MjsError):
    """Homological divisor <k, omega> fell below the Diophantine guard."""

    def __init__(self, message, k=None, divisor=None):
        super().__init__(message)
        self.k = k
        self.divisor = divisor


class TruncationOverflow(MjsError):
    """Series order/mode caps exceeded (hard caps: |k|_inf <= 64, degree <= 12)."""


# --- averaging / Larmor --------------------------------------------------

class FrequencyVanishes(MjsError):
    """omega_1(x_2) vanishes somewhere; rational averaging undefined."""


class NondegeneracyFailed(MjsError):
    """Critical-set classification requested on a degenerate frequency profile."""


# --- spectra -------------------------------------------------------------

class SymbolNotResolvable(MjsError):
    """Symbol has no Fourier representation resolvable within the mode caps."""


class TruncationInsufficient(MjsError):
    """Eigenvector mass on the mode boundary exceeds tolerance at the size cap."""


class WindowTooSparse(MjsError):
    """Spectral window holds too few eigenvalues for pairing statistics."""


class DegenerateDenominator(MjsError):
    """Gram-Schmidt normalization denominator vanished."""


# --- CLI -----------------------------------------------------------------

class ConfigInvalid(MjsError):
    """Experiment configuration failed validation (CLI exit code 2)."""


class NumericalFailure(MjsError):
    """Experiment aborted on a numerical error (CLI exit code 3)."""


# --- warnings ------------------------------------------------------------

class EmptyLadderWarning(UserWarning):
    """Admissibility window contains no lattice points (reported, not fatal)."""


class RationalFluxWarning(UserWarning):
    """Randers flux is (near-)rational; ladder branches may interleave."""
