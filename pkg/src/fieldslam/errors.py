"""Exception types shared across the solvers and evaluation code."""


class FieldSlamError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(FieldSlamError):
    """A point to be projected lies at or behind the camera plane."""


class NonPositiveInverseDepth(FieldSlamError):
    """An inverse depth value is zero or negative."""


class SingularSystem(FieldSlamError):
    """A normal-equation system is rank deficient after gauge fixing."""


class NoOverlap(FieldSlamError):
    """Two frames share too few co-visible pixels for a correspondence field."""


class EmptyMesh(FieldSlamError):
    """No zero crossing found when extracting a level-set mesh."""


class DegenerateHull(FieldSlamError):
    """Visibility hull points are too few or coplanar."""


class TooFewPoses(FieldSlamError):
    """Trajectory alignment needs at least three associated poses."""


class ConfigError(FieldSlamError):
    """A run configuration file is malformed or contains unknown keys."""
