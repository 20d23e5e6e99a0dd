"""Exception hierarchy for flowdiff.

Grouped so the CLI can map failures onto exit codes: configuration
problems, data problems, and numerical failures.
"""


class FlowdiffError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowdiffError):
    """Invalid or missing configuration / arguments."""


class DataError(FlowdiffError):
    """Input data violates the documented schema or consistency rules."""


class NumericalError(FlowdiffError):
    """A computation failed or would produce an invalid result."""


# -- data errors ------------------------------------------------------------

class PanelParseError(DataError):
    """Malformed row or cell in an input file; message carries line context."""


class PanelSchemaError(DataError):
    """Header or grid structure inconsistent with the documented schema."""


class PanelConsistencyError(DataError):
    """Stored totals disagree with recomputed sums beyond tolerance."""


class UnknownLocationError(DataError, KeyError):
    """A referenced location does not exist in the fitted object."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class MissingArtifactError(DataError):
    """A downstream command needs an artifact no command has produced yet."""


# -- numerical errors -------------------------------------------------------

class InvalidParameterError(NumericalError):
    """Parameter outside its documented domain (negative, non-finite, ...)."""


class DegenerateScheduleError(NumericalError):
    """Schedule normalizer is zero; nothing to distribute over."""


class InfeasibleSplitError(NumericalError):
    """Net total cannot be split into nonnegative in/out flows."""


class DegenerateFitError(NumericalError):
    """Design matrix is singular; the model cannot be identified."""


class NegativeInflowError(NumericalError):
    """Reconstructed age-specific inflow went nonpositive (m too small)."""


class StuckChainError(NumericalError):
    """MCMC chain rejected every proposal for too long."""


class InsufficientSampleError(NumericalError):
    """Not enough retained draws to summarize."""
