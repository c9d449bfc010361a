//! Simulation engine and policy library for allocating recruitment
//! resources across sites to assemble a cohort whose joint demographic
//! distribution tracks a target population.
//!
//! Sites are modeled as categorical response distributions over a shared
//! demographic cell space; a recruiter's knowledge of each site is a
//! Dirichlet belief updated from observed recruits. Policies turn that
//! belief into a per-iteration allocation of recruitment resources, from
//! knowledge-free baselines to a simplex-constrained minimizer of the
//! expected post-recruitment cohort distance. The experiments module runs
//! seeded replicate batteries and dynamics-factor sweeps and emits
//! figure-ready aggregates.

pub mod belief;
pub mod demographics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod schema;
pub mod simulator;

pub use belief::{DirichletBelief, PriorScheme};
pub use demographics::{CohortCounts, JointDistribution, MarginalSet, SiteModel};
pub use dynamics::DynamicsConfig;
pub use error::{CoreError, Result};
pub use experiments::{
    credible_interval, run_replicates, sweep, AggregateResult, CredibleInterval, ExperimentSpec,
    SweepAxis,
};
pub use metrics::{DistanceMetric, LogBase};
pub use policy::{AllocationVector, IntegerAllocation, PolicyKind, SolverConfig};
pub use schema::AttributeSchema;
pub use simulator::{
    replay_check, run_simulation, PolicyConfig, SimulationConfig, SimulationResult,
    StudyPopulation,
};
