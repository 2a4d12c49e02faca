"""Exception hierarchy shared across the package."""


class PanelPosiError(Exception):
    """Base class for all package-specific failures."""


class SingularDesign(PanelPosiError):
    """Design (or active submatrix) is rank deficient beyond tolerance."""


class InvalidOrder(PanelPosiError):
    """log-difference requested with a <= b."""


class AllInfinite(PanelPosiError):
    """Weight normalization undefined: no finite weight present."""


class NoConvergence(PanelPosiError):
    """Solver hit the sweep cap before reaching its tolerance."""

    def __init__(self, message: str, kkt_gap: float):
        super().__init__(message)
        self.kkt_gap = kkt_gap


class EmptyActiveSet(PanelPosiError):
    """Operation requires at least one active covariate."""


class DegenerateDof(PanelPosiError):
    """Variance estimation needs more observations than regressors."""


class SelectionInfeasible(PanelPosiError):
    """Observed response violates the selection polyhedron beyond slack."""


class InconsistentZeroRow(PanelPosiError):
    """A constraint row orthogonal to the test direction is infeasible."""


class EmptyInterval(PanelPosiError):
    """Truncation interval collapsed (lower endpoint >= upper endpoint)."""


class OutOfSupport(PanelPosiError):
    """Statistic lies outside the truncation interval."""


class DuplicateEntry(PanelPosiError):
    """Two p-values supplied for the same (unit, covariate) cell."""


class EmptyFamily(PanelPosiError):
    """No covariate is active anywhere; family-level quantity undefined."""


class ShapeMismatch(PanelPosiError):
    """Input files disagree on dimensions."""


class ParseError(PanelPosiError):
    """Malformed input file; message carries row/column location."""


class ConfigError(PanelPosiError):
    """Invalid run configuration."""


class DegenerateIntervalWarning(UserWarning):
    """Truncation interval is numerically a point; p-value forced to 1."""
