"""Exception hierarchy shared by all lift3d modules."""


class Lift3DError(Exception):
    """Base class for every error raised deliberately by lift3d."""


# geometry
class BehindCamera(Lift3DError):
    pass


# prototypes
class ParseError(Lift3DError, ValueError):
    pass


class MissingKeypointFile(Lift3DError, FileNotFoundError):
    pass


class EmptyClass(Lift3DError):
    pass


# regression
class SingularSystem(Lift3DError):
    pass


class NonConvergence(Lift3DError):
    pass


class DimensionMismatch(Lift3DError, ValueError):
    pass


# spatial
class EmptyCluster(Lift3DError):
    pass


class InsufficientData(Lift3DError):
    pass


class UnknownComponent(Lift3DError, KeyError):
    pass


# lifting
class TooFewCorrespondences(Lift3DError):
    pass


class NoVisibleKeypoints(Lift3DError):
    pass


class DivergedBehindCamera(Lift3DError):
    pass


class MissingPriors(Lift3DError, KeyError):
    pass


class NoProtoForClass(Lift3DError, KeyError):
    pass


# metrics
class MissingAzimuth(Lift3DError, ValueError):
    pass


# io
class SchemaError(Lift3DError, ValueError):
    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        where = ":".join(str(p) for p in (path, field) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)


class DanglingReference(Lift3DError):
    pass
