"""Exception types shared across the package."""


class PmoptError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(PmoptError):
    """A macro-triangle has nonpositive area for the requested parameters."""


class SingularMaterial(PmoptError):
    """A material reluctivity is zero or negative."""


class SolveFailure(PmoptError):
    """The linear system could not be factorized or solved."""


class TrainingFailure(PmoptError):
    """A reduced-basis snapshot is numerically dependent on the current basis."""


class NonpositiveCoercivity(PmoptError):
    """The coercivity lower bound is not positive at the requested parameters."""


class ZeroVariance(PmoptError):
    """A variance-based quantity was requested for an (almost) constant output."""


class QPFailure(PmoptError):
    """The quadratic subproblem could not be solved, even after relaxation."""


class InfeasibleParameter(PmoptError):
    """A parameter point lies outside the admissible (reduced) parameter set."""


class ConfigError(PmoptError):
    """A run configuration is malformed or inconsistent."""
