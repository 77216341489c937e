"""Exception types shared across the package."""


class StatemortError(Exception):
    """Base class for package-specific errors."""


class ConfigError(StatemortError):
    """Bad or inconsistent run configuration."""


class ParseError(StatemortError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ZeroExposure(ParseError):
    """Exposure column was zero or negative."""


class UnknownState(ParseError):
    """State code outside the closed 51-code set."""


class RateAboveOne(StatemortError):
    """A mortality rate of 1 or more inside the modeling window."""


class MissingCell(StatemortError):
    """Zero deaths in a cell; no finite log-rate exists."""


class EmptySubset(StatemortError):
    """Windowing produced no training cells."""


class IncompleteCoverage(StatemortError):
    """A state is missing one or more (age, year) cells required for aggregation."""

    def __init__(self, cell, missing_states):
        self.cell = cell
        self.missing_states = tuple(missing_states)
        super().__init__(
            f"cell (age={cell[0]}, year={cell[1]}) missing states: "
            + ", ".join(self.missing_states)
        )


class ZeroVarianceColumn(StatemortError):
    """Covariate column is constant and cannot be standardized."""


class IsolatedState(StatemortError):
    """Frontier recursion started from a node with no graph neighbors."""


class GroupingError(StatemortError):
    """Group construction could not satisfy its preconditions."""


class FactorizationError(StatemortError):
    """Covariance factorization failed even after jitter escalation."""


class FitFailure(StatemortError):
    """Every optimizer restart failed to produce a finite likelihood."""


class InvariantBreach(StatemortError):
    """An internal consistency check failed; indicates a bug, not bad input."""
