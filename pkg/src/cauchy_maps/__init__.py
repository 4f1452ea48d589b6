"""Peeling simulations of critical Boltzmann planar maps with Cauchy-type perimeter walks.

The main entry points are re-exported here; see the submodules for details.
"""

from .kernel import DisplacementLaw, builtin_kernel, model_constants, mu_law
from .maps import PlanarMap, build_boltzmann, build_targeted, diameter, dual_distances
from .estimators import ExperimentReport, run_experiment
from .rng import stream

__all__ = [
    "DisplacementLaw", "builtin_kernel", "model_constants", "mu_law",
    "PlanarMap", "build_boltzmann", "build_targeted", "diameter", "dual_distances",
    "ExperimentReport", "run_experiment", "stream",
]

__version__ = "0.1.0"
