"""Tagged-particle self-diffusion on a finite periodic exclusion lattice.

Two independent routes to the same per-count diffusion matrix: a
low-rank variational minimization of a quadratic functional over
occupancy configurations, and a kinetic Monte Carlo long-time estimate
of the tagged particle's mean squared drift.  The `cli` module wires
both into a reproducible pipeline.
"""

from .config import ConfigError, RunConfig, build_config, parse_config_file
from .diffusion import (
    DiffusionCurve,
    curve_from_forms,
    interpolate,
    read_curve,
    trace_average,
    write_curve,
)
from .estimator import StratifiedPlan, naive_mc, stratified_mc
from .kmc import KMCParams, TaggedTrajectoryStats
from .lattice import Configuration, Grid, JumpModel
from .lowrank import LowRankFunction, Rank1Function, read_table, write_table
from .objective import ObjectiveContext, TableFunction, functional_value
from .optimize import ALSConfig, SolveReport, dense_minimize, successive_minimize

__version__ = "1.0.0"

__all__ = [
    "ALSConfig",
    "ConfigError",
    "Configuration",
    "DiffusionCurve",
    "Grid",
    "JumpModel",
    "KMCParams",
    "LowRankFunction",
    "ObjectiveContext",
    "Rank1Function",
    "RunConfig",
    "SolveReport",
    "StratifiedPlan",
    "TableFunction",
    "TaggedTrajectoryStats",
    "build_config",
    "curve_from_forms",
    "dense_minimize",
    "functional_value",
    "interpolate",
    "naive_mc",
    "parse_config_file",
    "read_curve",
    "read_table",
    "stratified_mc",
    "successive_minimize",
    "trace_average",
    "write_curve",
    "write_table",
    "__version__",
]
