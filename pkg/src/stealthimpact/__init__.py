"""Worst-case impact assessment of stealthy attacks on stochastic control loops.

The pipeline: model the closed loop (plant, steady-state estimator, feedback),
rewrite an attack strategy as routing and injection matrices, stack the
attacked dynamics into Gaussian laws for the critical states and detection
residuals, and maximize each critical mean under the stealthiness budget to
bound the exceedance probability and the expected worst excursion.
"""

from .attacks import (
    AttackMatrices,
    Candidate,
    DecisionLayout,
    EmptyResources,
    EnumerationCapExceeded,
    InvalidPermutation,
    KINDS,
    OverlappingSets,
    ResourceSet,
    StrategySpec,
    build_bias,
    build_dos,
    build_fdi,
    build_fdi_plus_dos,
    build_replay,
    build_rerouting,
    build_sign_alternation,
    candidates,
    decision_layout,
)
from .cli import AssessmentEntry, assess, main
from .distrib import (
    GaussianSummary,
    SigmaZNotPd,
    StackedMaps,
    epsilon_prime,
    gaussian_summary,
    kl_divergence_gaussian,
    normalize_critical_map,
    stack_dynamics,
    stationary_law,
    summarize,
)
from .mcvalidate import (
    EmpiricalSummary,
    KlCheckResult,
    SimulationConfig,
    empirical_kl_check,
    nominal_long_run,
    simulate,
)
from .numcore import (
    DegenerateVariance,
    NonConvergence,
    NotPositiveDefinite,
    UnstableClosedLoop,
    UnstableMatrix,
    gaussian_exceed,
    kalman_gain,
    solve_dare,
    solve_lyapunov,
)
from .scenario import (
    DimensionError,
    ParseError,
    Scenario,
    SchemaError,
    bundled_scenario_path,
    load_scenario,
)
from .solver import (
    ConvexProblem,
    ImpactReport,
    Infeasible,
    NumericalFailure,
    SolveResult,
    compute_impact,
    eliminate_equalities,
    mean_impact_lower,
    solve_qclp,
)
from .sysmodel import (
    ControllerModel,
    DimensionMismatch,
    EstimatorModel,
    ExtendedSystem,
    NominalLoop,
    PlantModel,
    SystemModel,
    assemble_extended,
    assemble_nominal,
    build_estimator,
)

__version__ = "0.1.0"

__all__ = [
    "AttackMatrices",
    "AssessmentEntry",
    "Candidate",
    "ControllerModel",
    "ConvexProblem",
    "DecisionLayout",
    "DegenerateVariance",
    "DimensionError",
    "DimensionMismatch",
    "EmpiricalSummary",
    "EmptyResources",
    "EnumerationCapExceeded",
    "EstimatorModel",
    "ExtendedSystem",
    "GaussianSummary",
    "ImpactReport",
    "Infeasible",
    "InvalidPermutation",
    "KINDS",
    "KlCheckResult",
    "NominalLoop",
    "NonConvergence",
    "NotPositiveDefinite",
    "NumericalFailure",
    "OverlappingSets",
    "ParseError",
    "PlantModel",
    "ResourceSet",
    "Scenario",
    "SchemaError",
    "SigmaZNotPd",
    "SimulationConfig",
    "SolveResult",
    "StackedMaps",
    "StrategySpec",
    "SystemModel",
    "UnstableClosedLoop",
    "UnstableMatrix",
    "assemble_extended",
    "assemble_nominal",
    "assess",
    "build_bias",
    "build_dos",
    "build_estimator",
    "build_fdi",
    "build_fdi_plus_dos",
    "build_replay",
    "build_rerouting",
    "build_sign_alternation",
    "bundled_scenario_path",
    "candidates",
    "compute_impact",
    "decision_layout",
    "eliminate_equalities",
    "empirical_kl_check",
    "epsilon_prime",
    "gaussian_exceed",
    "gaussian_summary",
    "kalman_gain",
    "kl_divergence_gaussian",
    "load_scenario",
    "main",
    "mean_impact_lower",
    "nominal_long_run",
    "normalize_critical_map",
    "simulate",
    "solve_dare",
    "solve_lyapunov",
    "solve_qclp",
    "stack_dynamics",
    "stationary_law",
    "summarize",
]
