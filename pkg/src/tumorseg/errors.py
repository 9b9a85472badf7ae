"""Exception hierarchy shared across the pipeline."""


class TumorsegError(Exception):
    """Base class for all pipeline errors."""


class MissingModality(TumorsegError):
    pass


class ShapeMismatch(TumorsegError):
    pass


class AffineMismatch(TumorsegError):
    pass


class NonFiniteVoxel(TumorsegError):
    pass


class IoFailure(TumorsegError):
    pass


class EmptyForeground(TumorsegError):
    pass


class BoxOutOfBounds(TumorsegError):
    pass


class InvalidOverlap(TumorsegError):
    pass


class MissingWindowOutput(TumorsegError):
    pass


class BackendFailure(TumorsegError):
    pass


class ModelLoadFailure(TumorsegError):
    pass


class ConfigInvalid(TumorsegError):
    pass


class EmptyEnsemble(TumorsegError):
    pass


class SliceOutOfBounds(TumorsegError):
    pass


class EmptyDataset(TumorsegError):
    pass


class FileMissing(TumorsegError):
    pass
