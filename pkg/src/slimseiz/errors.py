"""Exception hierarchy shared by every slimseiz module."""


class SlimSeizError(Exception):
    """Base class for all library errors."""


class DataError(SlimSeizError):
    """Input data is malformed or unusable (CLI exit code 3)."""


# eeg_io
class InvalidHeader(DataError):
    pass


class TruncatedData(DataError):
    pass


class UnsupportedLayout(DataError):
    pass


class ParseError(DataError):
    pass


class OrderError(DataError):
    pass


# pipeline
class EmptyClass(DataError):
    pass


class TooFewSamples(DataError):
    pass


# mlcore
class DegenerateInput(DataError):
    pass


class TooFewMinority(DataError):
    pass


class ShapeMismatch(SlimSeizError, ValueError):
    pass


class LengthMismatch(SlimSeizError, ValueError):
    pass


# nn / model
class NonFinite(SlimSeizError, FloatingPointError):
    pass


class GraphCycle(SlimSeizError):
    pass


class NoPositives(SlimSeizError, ValueError):
    pass


class BudgetExceeded(SlimSeizError, ValueError):
    pass
