//! Multi-objective Bayesian optimization over merge schedules.

pub mod design;
pub mod ehvi;
pub mod optimize;
pub mod pareto;
pub mod scenario;

pub use design::{quasi_random_design, ScrambledHalton};
pub use ehvi::{log_ehvi, propose_candidate, Marginal, Proposal};
pub use optimize::{
    default_n_init, default_reference, front_of, run_optimization, BoSettings, HistoryRecord,
    ObjectiveHyperparams, OptimizationFailure, OptimizationOutcome, ScheduleObjective,
};
pub use pareto::{hypervolume_2d, non_dominated_indices, pareto_filter, Objectives, ParetoFront, ParetoPoint, ReferencePoint};
pub use scenario::{build_adaptive_policy, AccuracyDrop, select_scenario, AdaptivePolicy, PolicyEntry, ScenarioConstraint, Selection};
