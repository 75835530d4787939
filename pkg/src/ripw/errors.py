"""Exception taxonomy shared across the package.

Input/validation problems and numeric failures are kept in separate
branches so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class RipwError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RipwError):
    """Bad inputs: malformed data, invalid configuration, broken invariants."""


class NumericError(RipwError):
    """Well-formed inputs for which the computation cannot proceed."""


# ---------------------------------------------------------------- panel data


class UnbalancedPanel(ValidationError):
    """A unit is missing one or more periods."""


class NonBinaryTreatment(ValidationError):
    """Treatment column contains values outside {0, 1}."""


class DuplicateCell(ValidationError):
    """A (unit, period) pair appears more than once."""


class MissingValue(ValidationError):
    """An outcome, treatment, or covariate cell is missing."""


class DimensionTooLarge(ValidationError):
    """Period count exceeds the hard cap for exhaustive path enumeration."""


# ------------------------------------------------------------------- designs


class InvalidAdoptionSet(ValidationError):
    """Adoption-count set for a staggered support is out of range."""


class AbsoluteContinuityViolated(ValidationError):
    """Reshaped distribution puts mass on a path with zero propensity."""


class ZeroPropensityRealized(ValidationError):
    """A realized assignment path has zero probability under the design."""


class FloorTooLarge(ValidationError):
    """Overlap floor is incompatible with the support size."""


# ------------------------------------------------------------- date solvers


class NonUniformWeightsUnsupported(ValidationError):
    """Closed-form solver only covers equal time weights."""


class NoPositiveSolution(NumericError):
    """No strictly positive solution exists on the requested support."""


class SolverDiverged(NumericError):
    """Numeric solver produced a non-finite objective."""


class EmptyFamily(NumericError):
    """A concrete distribution was requested from an empty solution set."""


class DegenerateSupport(ValidationError):
    """Support carries no variation beyond the all-zeros/all-ones paths."""


# ----------------------------------------------------------------- estimator


class DegenerateDenominator(NumericError):
    """Weighted design variation is numerically zero; the fit is unstable."""


class AllWeightsZero(NumericError):
    """Every unit received weight zero; nothing to estimate."""


class TooFewUnits(ValidationError):
    """Not enough units for the requested fold count."""


# ---------------------------------------------------------------- propensity


class PathOutsideSupport(ValidationError):
    """A realized path is not contained in the declared support."""


class TooManyStrata(ValidationError):
    """Stratifying covariate has more levels than allowed."""


class EmptyStratum(ValidationError):
    """A stratum required for prediction has no training units."""


class SeparationDetected(NumericError):
    """A covariate perfectly predicts adoption; the likelihood is unbounded."""


class NonStaggeredSupport(ValidationError):
    """Operation requires a staggered adoption support."""
