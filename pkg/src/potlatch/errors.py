"""Exception types shared across the package."""


class PotlatchError(Exception):
    """Base class for all package errors."""


# --- kernel construction / validation ---

class NonStochasticRow(PotlatchError):
    """A transition-matrix row does not sum to 1 within tolerance."""


class NotReversible(PotlatchError):
    """pi_i p_ij != pi_j p_ji beyond tolerance for some pair (i, j)."""


class DisconnectedGraph(PotlatchError):
    """The positive-entry digraph is not strongly connected."""


class PeriodicGraph(PotlatchError):
    """The chain is periodic (gcd of cycle lengths > 1)."""


class EvenTorusSide(PotlatchError):
    """Torus side length must be odd (even sides give a periodic walk)."""


class SiteCapExceeded(PotlatchError):
    """Requested graph exceeds the configured total-site cap."""


class NoConvergence(PotlatchError):
    """Iterative solver hit its iteration cap."""


# --- spectral ---

class EigenSolverFailure(PotlatchError):
    """Jacobi sweeps did not converge within the sweep cap."""


# --- engine ---

class NotATorus(PotlatchError):
    """A torus-only functional was requested on a general kernel."""


class DimensionMismatch(PotlatchError):
    """Profile length does not match the kernel / decomposition."""


class NegativeMass(PotlatchError):
    """Potlatch dynamics require nonnegative masses."""


class HorizonExceeded(PotlatchError):
    """Internal event generation overflowed its safety cap."""


class MemoryCapExceeded(PotlatchError):
    """Dual coupling would exceed the configured memory cap."""


# --- analysis ---

class GridTooCoarse(PotlatchError):
    """Grid step violates the stability bound for this spectrum."""


class UnstableStep(PotlatchError):
    """Volterra residual check failed; refine the grid step."""


class NonPositiveMean(PotlatchError):
    """Log-scale fit requires strictly positive means."""


class EmptySample(PotlatchError):
    """Empirical distance requires nonempty samples."""


class HorizonTooShort(PotlatchError):
    """Truncation bias at the limit horizon exceeds 10% of the statistic."""


class TailTooFat(PotlatchError):
    """Envelope-certified tail exceeds the allowed fraction of the target."""


# --- harness ---

class ConfigInvalid(PotlatchError):
    """Experiment configuration failed validation.

    Carries a list of (field, message) diagnostics.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{field}: {msg}" for field, msg in self.diagnostics)
        super().__init__(f"invalid experiment config: {lines}")
