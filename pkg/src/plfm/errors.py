"""Exception types raised across the package.

Every error derives from :class:`PlfmError` so the CLI can map any of them to
a nonzero exit status.
"""


class PlfmError(Exception):
    pass


# structure ingestion
class MissingCA(PlfmError, ValueError):
    pass


class UnknownResidue(PlfmError, ValueError):
    pass


class MalformedRecord(PlfmError, ValueError):
    pass


class LengthOutOfRange(PlfmError, ValueError):
    pass


# geometry
class DegenerateGeometry(PlfmError, ValueError):
    pass


class MissingAtom(PlfmError, ValueError):
    pass


class SizeMismatch(PlfmError, ValueError):
    pass


class TooFewPoints(PlfmError, ValueError):
    pass


# networks
class InvalidConfig(PlfmError, ValueError):
    pass


class ShapeMismatch(PlfmError, ValueError):
    pass


class MissingTimes(PlfmError, ValueError):
    pass


class GraphConsumed(PlfmError, RuntimeError):
    pass


# sampling
class TimeAtOne(PlfmError, ValueError):
    pass


class TimeAtZero(PlfmError, ValueError):
    pass


class IndexOutOfRange(PlfmError, IndexError):
    pass


# motif scaffolding
class ParseError(PlfmError, ValueError):
    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"token {position}: {message}")
        self.position = position


class EmptySpec(PlfmError, ValueError):
    pass


class Infeasible(PlfmError, ValueError):
    pass


# metrics
class OracleFailure(PlfmError, RuntimeError):
    pass


class LengthMismatch(PlfmError, ValueError):
    pass


class EmptySelection(PlfmError, ValueError):
    pass


class MissingReference(PlfmError, LookupError):
    pass


# cli / pipeline
class EmptyDataset(PlfmError, ValueError):
    pass


class MissingDataset(PlfmError, FileNotFoundError):
    pass


class MissingCheckpoint(PlfmError, FileNotFoundError):
    pass
