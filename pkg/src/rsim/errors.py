"""Exception hierarchy shared by every rsim module."""


class RsimError(Exception):
    """Base class for all rsim errors."""


class FormatError(RsimError):
    """A file does not follow its declared format."""


class DataError(RsimError):
    """File contents parsed but hold invalid values (NaN, Inf)."""


class BundleError(RsimError):
    """Layers of a bundle disagree with each other."""


class IoError(RsimError, OSError):
    """A path could not be read or written."""


class ShapeError(RsimError, ValueError):
    pass


class NumericalError(RsimError, ArithmeticError):
    pass


class DegenerateInputError(RsimError, ValueError):
    pass


class IllConditionedWarning(UserWarning):
    """Too few probe inputs for the neuron count; correlations are inflated."""


class IllConditionedError(RsimError):
    """Raised where an ill-conditioned comparison is refused."""


class TaskError(RsimError, KeyError):
    pass


class ReachError(RsimError):
    pass


class WorldError(RsimError, ValueError):
    """A grid world violates its construction invariants."""


class ProbeError(RsimError):
    pass


class TrainingError(RsimError):
    pass
