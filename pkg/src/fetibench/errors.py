"""Exception hierarchy shared by all solver layers."""


class FetiError(Exception):
    """Base class for every error raised by :mod:`fetibench`."""


# linear algebra kernels
class NotPositiveDefinite(FetiError):
    pass


class IndefiniteInput(FetiError):
    pass


class IncompatibleRhs(FetiError):
    pass


# finite elements
class DomainError(FetiError, ValueError):
    pass


class EdgeNotOnBoundary(FetiError):
    pass


# decomposition
class DimensionMismatch(FetiError, ValueError):
    pass


class NodeNotFound(FetiError, KeyError):
    pass


class InsufficientCorners(FetiError):
    pass


class ZeroStiffnessDiagonal(FetiError):
    pass


# preconditioners and dual operators
class SingularInterior(FetiError):
    pass


class CoarseSingular(FetiError):
    pass


class SingularRemainder(FetiError):
    pass


class SingularCoarse(FetiError):
    pass


class NotConverged(FetiError):
    pass


# iterative engine
class NegativeInnerProduct(FetiError):
    """r^T z came out negative: the preconditioner is not symmetric PSD."""


# problem suite
class SingularGlobal(FetiError):
    pass


class StateSolveFailed(FetiError):
    def __init__(self, iteration, message=""):
        super().__init__(f"state solve failed at optimization iteration {iteration}: {message}")
        self.iteration = iteration


# cli
class ConfigError(FetiError):
    pass


class IoError(FetiError, OSError):
    pass
