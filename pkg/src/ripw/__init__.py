"""Reshaped inverse-propensity weighting for two-way fixed-effects panels.

Weighting each unit by the likelihood ratio between a solved "reshaped"
assignment distribution and its generalized propensity score makes the
weighted two-way regression consistent for a chosen time-weighted average
treatment effect, with design-based and double-robust inference.
"""

__version__ = "0.1.0"

from .design import (
    AssignmentDistribution,
    DesignSupport,
    ReshapedDistribution,
    clip_propensities,
    crossover_support,
    did_support,
    general_support,
    load_design,
    rip_weights,
    staggered_support,
    transient_support,
)
from .estimator import (
    GramSummary,
    OutcomeModel,
    RipwFit,
    crossfit_estimate,
    gram_summary,
    influence_values,
    ripw_infer,
    ripw_point,
    twfe_covariate_fitter,
    zero_outcome_fitter,
)
from .panel import (
    LongCsvSchema,
    PanelDataset,
    TimeWeights,
    center_doubly,
    centering_matrix,
    enumerate_paths,
    load_panel,
)
from .propensity import (
    fit_discrete_hazard,
    fit_empirical,
    fit_stratified,
    make_propensity_fitter,
)
from .simulate import (
    EffectWeights,
    MonteCarloReport,
    SimScenario,
    effect_weights,
    generate_panel,
    midpoint_reshape,
    run_monte_carlo,
    scenario_from_name,
    uniform_reshape,
)
from .solver import (
    DateResidual,
    SolutionFamily,
    SolverConfig,
    date_residual,
    effective_xi,
    pick_solution,
    solve_date,
    solve_generic,
    solve_staggered,
    solve_transient,
    solve_two_period,
)

__all__ = [
    "AssignmentDistribution",
    "DateResidual",
    "DesignSupport",
    "EffectWeights",
    "GramSummary",
    "LongCsvSchema",
    "MonteCarloReport",
    "OutcomeModel",
    "PanelDataset",
    "ReshapedDistribution",
    "RipwFit",
    "SimScenario",
    "SolutionFamily",
    "SolverConfig",
    "TimeWeights",
    "center_doubly",
    "centering_matrix",
    "clip_propensities",
    "crossfit_estimate",
    "crossover_support",
    "date_residual",
    "did_support",
    "effect_weights",
    "effective_xi",
    "enumerate_paths",
    "fit_discrete_hazard",
    "fit_empirical",
    "fit_stratified",
    "general_support",
    "generate_panel",
    "gram_summary",
    "influence_values",
    "load_design",
    "load_panel",
    "make_propensity_fitter",
    "midpoint_reshape",
    "pick_solution",
    "rip_weights",
    "ripw_infer",
    "ripw_point",
    "run_monte_carlo",
    "scenario_from_name",
    "solve_date",
    "solve_generic",
    "solve_staggered",
    "solve_transient",
    "solve_two_period",
    "staggered_support",
    "transient_support",
    "twfe_covariate_fitter",
    "uniform_reshape",
    "zero_outcome_fitter",
]
