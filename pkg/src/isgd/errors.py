"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite.

    ``index`` is the position of the offending sample inside the batch,
    when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateDistributionError(ValueError):
    """All smoothed scores are zero, so no distribution can be formed."""


class ZeroProbabilityError(ValueError):
    """A weight was requested for a pool entry that has probability zero."""


class EmptyDatasetError(ValueError):
    pass


class UndefinedVarianceError(ValueError):
    pass


class FormatError(ValueError):
    """File contents do not follow the expected binary layout."""


class ConsistencyError(ValueError):
    """Two inputs that must agree (e.g. image and label counts) do not."""


class TruncatedFileError(FormatError):
    pass


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``key_path`` names the offending entry (``train.optimizer.lr``);
    ``line``/``column`` are 1-based and only set for syntax errors.
    """

    def __init__(self, message, key_path=None, line=None, column=None):
        loc = []
        if key_path:
            loc.append(key_path)
        if line is not None:
            loc.append(f"line {line}, column {column}")
        text = f"{': '.join(loc)}: {message}" if loc else message
        super().__init__(text)
        self.key_path = key_path
        self.line = line
        self.column = column


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the metrics collected so far."""

    def __init__(self, iteration, records, cause=None):
        super().__init__(f"training diverged at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.records = records
        self.cause = cause
