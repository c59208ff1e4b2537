"""Finite-sample confidence sets for seroprevalence studies.

Exact test inversion over a (false positive rate, true positive rate,
infected count) grid, with likelihood-ratio and MCMC baselines, built-in
study datasets, and a CLI front end.
"""

from ._backend import backend_name
from .baselines import (
    Chain,
    LrtResult,
    McConfidenceSet,
    MleResult,
    NaturalParams,
    OptimizationError,
    logit_clamped,
    lrt_pvalue,
    lrt_statistic,
    mc_confset,
    mh_sample,
    mle,
)
from .confset import (
    ConfidenceSet,
    CoverageResult,
    MassTable,
    ParamGrid,
    PointEvidence,
    alt_evidence,
    basic_evidence,
    coverage_sim,
    default_grid,
    epsilon_bound,
    k_values_from_pi,
    level_mass,
    load_set,
    log_joint_grid,
    nu_level_count,
    point_evidence,
    project_interval,
    range_values,
    scan_grid,
)
from .data import (
    builtin_dataset,
    builtin_names,
    catalog,
    combine,
    parse_dataset,
    serialize_dataset,
)
from .model import (
    DEFAULT_PRUNE_TOL,
    Dataset,
    DensityTable,
    ParamPoint,
    PositiveCounts,
    StudyDesign,
    binom_log_pmf,
    density_table,
    joint_density,
    log_joint_density,
    main_pmf,
    simulate_study,
    tagged_rng,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "StudyDesign",
    "PositiveCounts",
    "ParamPoint",
    "Dataset",
    "DensityTable",
    "DEFAULT_PRUNE_TOL",
    "binom_log_pmf",
    "main_pmf",
    "joint_density",
    "log_joint_density",
    "density_table",
    "simulate_study",
    "tagged_rng",
    "ParamGrid",
    "PointEvidence",
    "ConfidenceSet",
    "MassTable",
    "CoverageResult",
    "default_grid",
    "range_values",
    "k_values_from_pi",
    "nu_level_count",
    "level_mass",
    "basic_evidence",
    "alt_evidence",
    "point_evidence",
    "epsilon_bound",
    "scan_grid",
    "project_interval",
    "coverage_sim",
    "log_joint_grid",
    "load_set",
    "NaturalParams",
    "Chain",
    "MleResult",
    "LrtResult",
    "McConfidenceSet",
    "OptimizationError",
    "logit_clamped",
    "mle",
    "lrt_statistic",
    "lrt_pvalue",
    "mh_sample",
    "mc_confset",
    "builtin_dataset",
    "builtin_names",
    "catalog",
    "combine",
    "parse_dataset",
    "serialize_dataset",
]
