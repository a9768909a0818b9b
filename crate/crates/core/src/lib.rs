//! Adaptive optimal control of a SISO plant under bounded disturbances
//! and coprime-factor perturbations, with set-membership estimation of
//! the plant and its perturbation levels.

pub mod control;
pub mod emit;
pub mod estimator;
pub mod experiment;
pub mod lp;
pub mod plant;
pub mod poly;

pub use control::{control_adaptive, control_optimal, project_onto_polytope, rls_step, ControllerKind, RlsState};
pub use estimator::{EpsMode, EstimateVector, EstimatorConfig, EstimatorState};
pub use experiment::{compute_j, replicate_study, run, ExperimentConfig, RunOutput, RunSummary, TraceRecord};
pub use lp::{lfp_minimize, lp_minimize, Affine, LpSolution, LpStatus, Polyhedron};
pub use plant::{DisturbanceKind, DisturbanceSpec, PlantParams, PlantState};
pub use poly::{controller_norm, ImpulseNorm, NormOptions, Polynomial};
