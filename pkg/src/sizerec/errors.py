"""Exception hierarchy shared by every sizerec module."""


class SizeRecError(Exception):
    """Base class for all sizerec errors."""


# catalog
class UnknownSize(SizeRecError, KeyError):
    pass


class EmptyDataset(SizeRecError, ValueError):
    pass


class TooFewInstances(SizeRecError, ValueError):
    pass


class InvalidConfig(SizeRecError, ValueError):
    pass


class InvalidScale(SizeRecError, ValueError):
    pass


# nncore
class ShapeMismatch(SizeRecError, ValueError):
    pass


class AllMasked(SizeRecError, ValueError):
    pass


class AllKeysMasked(AllMasked):
    pass


class InvalidLabel(SizeRecError, ValueError):
    pass


class IndexOutOfRange(SizeRecError, IndexError):
    pass


class EmptySequence(SizeRecError, ValueError):
    pass


class NotAScalar(SizeRecError, ValueError):
    pass


class NoGradients(SizeRecError, RuntimeError):
    pass


# models / training / evaluation
class EmptyTrainingSet(SizeRecError, ValueError):
    pass


class EmptyHistory(SizeRecError, ValueError):
    pass


class ConfigInvalid(InvalidConfig):
    pass


class DivergedLoss(SizeRecError, FloatingPointError):
    pass


class EmptyEvaluationSet(SizeRecError, ValueError):
    pass


class InsufficientAblationUsers(SizeRecError, ValueError):
    pass


class EmptyPopulation(SizeRecError, ValueError):
    pass


# serving / bundles
class ModelLoadError(SizeRecError, OSError):
    pass


class BundleCorrupt(ModelLoadError):
    pass


class UnknownScale(SizeRecError, KeyError):
    pass


class BadRequest(SizeRecError, ValueError):
    pass


class BindError(SizeRecError, OSError):
    pass
