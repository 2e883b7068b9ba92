"""Exception types shared across the package."""


class EmflabError(Exception):
    """Base class for all package-specific errors."""


# --- ensembles ---------------------------------------------------------

class AsymmetricProfile(EmflabError):
    """Variance profile is not symmetric."""


class ColumnSumViolation(EmflabError):
    """Variance profile columns do not sum to one."""


class BoundViolation(EmflabError):
    """Variance profile entries leave the c/n .. C/n band."""


class TimeOutOfRange(EmflabError):
    """Interpolation time outside the allowed interval."""


# --- spectral ----------------------------------------------------------

class LowerHalfPlane(EmflabError):
    """Spectral parameter must lie in the upper half plane."""


class ZeroDirection(EmflabError):
    """Direction vector must be nonzero."""


class IndexOutOfRange(EmflabError):
    """Eigenvalue index outside 1..n."""


class BranchAmbiguity(EmflabError):
    """Stieltjes branch undefined for real energies inside the bulk."""


class ConvergenceFailure(EmflabError):
    """Iterative root/location search failed to converge."""


# --- dbm ---------------------------------------------------------------

class StepTooLarge(EmflabError):
    """Requested time step exceeds the stability ceiling."""


class GapCollapse(EmflabError):
    """Eigenvalue gap fell below the configured floor."""


class PathTooShort(EmflabError):
    """Eigenvalue path does not cover the requested horizon."""


# --- observables -------------------------------------------------------

class EmptyIndexSet(EmflabError):
    """Projection index set must be nonempty."""


class OddDimension(EmflabError):
    """Hafnian requires an even-dimensional matrix."""


class DimensionTooLarge(EmflabError):
    """Combinatorial routine called beyond its size ceiling."""


class MissingOverlap(EmflabError):
    """Overlap value required by the observable is absent."""


# --- momentflow --------------------------------------------------------

class DegenerateSpectrum(EmflabError):
    """Flow coefficients undefined for coinciding eigenvalues."""


class StateSpaceTooLarge(EmflabError):
    """Occupation-state enumeration beyond the configured ceiling."""


# --- grassmann ---------------------------------------------------------

class GeneratorBudgetExceeded(EmflabError):
    """Too many anticommuting generators requested."""


class OddDegreeInput(EmflabError):
    """Exponential defined only for even-degree arguments."""


class IncompleteOrdering(EmflabError):
    """Berezin integration requires the full generator ordering."""


class SingularCovariance(EmflabError):
    """Covariance matrix must be invertible."""


# --- stats -------------------------------------------------------------

class TimeBelowValidity(EmflabError):
    """Monte Carlo time below the regime where the bound applies."""


# --- cli ---------------------------------------------------------------

class ConfigError(EmflabError):
    """Bad configuration input; carries the offending key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
