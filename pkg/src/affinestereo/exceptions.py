"""Exception hierarchy for numerical and geometric failures.

Every failure mode raised by the library derives from
:class:`AffineStereoError`, so callers (and the CLI) can map geometric or
numerical degeneracies to a single exit path.
"""


class AffineStereoError(Exception):
    """Base class for all library-specific failures."""


class RankDeficient(AffineStereoError):
    """A linear system lost rank below what the geometry requires.

    Carries the effective rank found at the configured tolerance.
    """

    def __init__(self, rank: int, needed: int, message: str = ""):
        self.rank = int(rank)
        self.needed = int(needed)
        msg = message or f"effective rank {rank} < required {needed}"
        super().__init__(msg)


class DegenerateConfiguration(AffineStereoError):
    """3D points do not span enough of space (coplanar or worse)."""


class NoConsensus(AffineStereoError):
    """RANSAC could not assemble a minimal consensus set."""


class InvalidInit(AffineStereoError):
    """Bundle adjustment was given an unresectable initial camera."""


class DegeneratePair(AffineStereoError):
    """The two cameras admit no well-defined epipolar geometry."""


class AllZeroHeatmap(AffineStereoError):
    """A heatmap contains no activation; nothing to detect."""


class EmptyAfterRejection(AffineStereoError):
    """Surface outlier rejection discarded every data point."""


class DegenerateDomain(AffineStereoError):
    """Surface parametrization points are collinear; no 2D domain exists."""


class OutOfDomain(AffineStereoError):
    """A surface was evaluated outside its parameter rectangle."""


class CollinearPoints(AffineStereoError):
    """Registration points are collinear; rotation is unrecoverable."""


class CountMismatch(AffineStereoError):
    """Paired point lists have different lengths."""
