"""Variance-reduced forward-backward splitting for finite-sum monotone inclusions."""

from .async_sim import AsyncConfig, AsyncErrorReport, measure_delay_error, run_async
from .bench import (
    ExperimentConfig,
    ExperimentEntry,
    ExperimentResult,
    experiment_from_json,
    experiment_to_json,
    paper_protocol_config,
    run_experiment,
)
from .catalyst import CatalystConfig, optimal_sigma, run_catalyst
from .operators import (
    FiniteSumProblem,
    ResolventOperator,
    affine_component,
    affine_operator,
    apply_component,
    apply_full,
    box_normal_cone,
    callback_component,
    custom_resolvent,
    estimate_constants,
    l2_regularizer,
    make_problem,
    problem_from_json,
    problem_to_json,
    project_simplex_cap,
    resolve,
    simplex_cap_normal_cone,
    zero_operator,
)
from .problems import GeneratorSpec, exact_solution, generate
from .schemes import (
    EpochSchedule,
    ProbSchedule,
    Scheme,
    gd,
    hsag,
    parse_scheme,
    saga,
    saga_svrg_rand,
    sagd,
    sarah,
    scheme_constants,
    svrg,
    svrg_rand,
)
from .solver import (
    RunConfig,
    Trace,
    recommended_gamma,
    run_fb,
    run_sarah,
    run_vr,
    step_size_bound,
)

__version__ = "0.1.0"

__all__ = [
    "AsyncConfig",
    "AsyncErrorReport",
    "CatalystConfig",
    "EpochSchedule",
    "ExperimentConfig",
    "ExperimentEntry",
    "ExperimentResult",
    "FiniteSumProblem",
    "GeneratorSpec",
    "ProbSchedule",
    "RunConfig",
    "Scheme",
    "Trace",
    "ResolventOperator",
    "affine_component",
    "affine_operator",
    "apply_component",
    "apply_full",
    "box_normal_cone",
    "callback_component",
    "custom_resolvent",
    "estimate_constants",
    "exact_solution",
    "experiment_from_json",
    "experiment_to_json",
    "gd",
    "generate",
    "hsag",
    "l2_regularizer",
    "make_problem",
    "measure_delay_error",
    "optimal_sigma",
    "paper_protocol_config",
    "parse_scheme",
    "problem_from_json",
    "problem_to_json",
    "project_simplex_cap",
    "recommended_gamma",
    "resolve",
    "run_async",
    "run_catalyst",
    "run_experiment",
    "run_fb",
    "run_sarah",
    "run_vr",
    "saga",
    "saga_svrg_rand",
    "sagd",
    "sarah",
    "scheme_constants",
    "simplex_cap_normal_cone",
    "step_size_bound",
    "svrg",
    "svrg_rand",
    "zero_operator",
]
