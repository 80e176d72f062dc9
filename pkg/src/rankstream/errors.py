"""Exception hierarchy shared across the harness."""


class HarnessError(Exception):
    """Base class for all rankstream errors."""


class ParseError(HarnessError):
    """A corpus file could not be parsed; message names file and line."""


class ValidationError(HarnessError):
    """Input data violates a structural invariant."""


class ConfigError(HarnessError):
    """A configuration value is out of range or unknown."""


class ContractError(HarnessError):
    """A caller violated an API precondition (dimensions, missing cells)."""


class ScoringError(HarnessError):
    """A ranker could not score the given query/document pair."""


class TrainingError(HarnessError):
    """Training could not proceed (e.g. no training pairs)."""


class EstimationError(HarnessError):
    """Fisher estimation could not proceed."""


class FeatureError(HarnessError):
    """A dataset characteristic is undefined for this input."""


class FitError(HarnessError):
    """The regression design is unusable (rank deficient, too few rows)."""
