"""Exception types shared across the package."""


class IcppError(Exception):
    """Base class for all package errors."""


class InvalidRegionError(IcppError):
    """Region is degenerate or malformed (zero measure, self-intersecting)."""


class OutOfRegionError(IcppError):
    """A point lies outside the observation region."""


class BasisError(IcppError):
    """Invalid basis layout (bad bandwidth, knots outside region, too few centers)."""


class PatternUnsupportedError(IcppError):
    """A pattern contains a point where every component density vanishes."""


class EnumerationBudgetError(IcppError):
    """Exact E-step/likelihood enumeration would exceed the label budget."""


class DegenerateStatisticsError(IcppError):
    """E-step statistics violate Jensen's inequality or carry no information."""


class SelectionFailedError(IcppError):
    """Every cross-validation cell failed; no model can be selected."""


class RankDeficiencyError(IcppError):
    """Reduced Fisher information is singular beyond the ridge tolerance."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class IngestError(IcppError):
    """Input data file is malformed; carries offending line numbers."""

    def __init__(self, message, lines=None):
        super().__init__(message)
        self.lines = list(lines) if lines is not None else []


class ConfigError(IcppError):
    """Run configuration is invalid."""
