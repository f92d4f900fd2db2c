"""Robust sizing of a buried permanent-magnet pole.

Parametrized 2D magnetostatic FE model with affine decomposition, analytic
first/second-order sensitivities, certified reduced-basis surrogates, moment
estimation under uniform parameter scatter, and six optimization formulations
(deterministic, worst-case and stochastic) solved by SQP or particle swarm.
"""

from . import bench, cli, fem, geom, mesh, opt, rb, sens, uq  # noqa: F401
from .errors import (  # noqa: F401
    ConfigError,
    DegenerateGeometry,
    InfeasibleParameter,
    NonpositiveCoercivity,
    PmoptError,
    QPFailure,
    SingularMaterial,
    SolveFailure,
    TrainingFailure,
    ZeroVariance,
)

__version__ = "0.1.0"
