"""Exception types shared across the pipeline."""


class RadarSenseError(Exception):
    """Base class for all package errors."""


class ConfigError(RadarSenseError, ValueError):
    """A RadarConfig breaks one of its invariants."""


class DomainError(RadarSenseError, ValueError):
    """An argument lies outside the domain of a physical formula."""


class ShapeError(RadarSenseError, ValueError):
    """An array does not have the shape an operation requires."""


class CyclicPrefixError(RadarSenseError, ValueError):
    """The cyclic prefix is shorter than the maximum echo delay."""


class RankDeficientError(RadarSenseError, ValueError):
    """A restricted least-squares system lost full column rank."""

    def __init__(self, message, clusters=()):
        super().__init__(message)
        self.clusters = tuple(clusters)


class IllConditionedError(RadarSenseError, ValueError):
    """Every candidate angle tuple produced an ill-conditioned Gram matrix."""
