"""Exception hierarchy shared by all fairboost modules.

Validation-type errors (bad input data, bad configuration) map to CLI exit
code 1; runtime/training errors map to exit code 2.
"""


class FairboostError(Exception):
    """Base class for all package errors."""


class ValidationError(FairboostError):
    """Input value violates a documented precondition (e.g. rating out of range)."""


class IngestionError(ValidationError):
    """A data file could not be parsed; the message names the offending line."""


class SchemaError(ValidationError):
    """A CSV column mapping does not match the file."""


class SplitError(ValidationError):
    """Too few records to build a train/test split."""


class UndefinedMetricError(FairboostError):
    """A metric was requested on an empty set of pairs."""


class DegenerateWeightsError(FairboostError):
    """All training weights are zero."""


class DivergenceError(FairboostError):
    """Training loss became non-finite; the message names the epoch."""


class DegenerateUpdateError(FairboostError):
    """A boosting weight update normalizer collapsed to zero."""


class EstimationError(FairboostError):
    """Propensity estimation failed (e.g. empty rating bin in the marginal)."""
