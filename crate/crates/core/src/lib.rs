//! Learned generation of safety-critical traffic scenarios.
//!
//! A scenario family is a DAG of parameter blocks ([`graph`]). An
//! autoregressive Gaussian policy ([`policy`]) proposes block values for a
//! given route and target speed; a deterministic 2D simulator ([`sim`]) runs a
//! PID-driven ego vehicle against the proposed obstacle; the [`trainer`]
//! ascends expected reward with score-function gradients and an entropy bonus.
//! [`baselines`] and [`metrics`] provide the comparison methods and reporting.

pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod route;
pub mod sim;
pub mod state;
pub mod trainer;

pub use baselines::{GridConfig, Scored};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::Method;
pub use graph::{BlockDef, BlockKind, BlockRole, Preset, ScenarioGraph, ScenarioSpec};
pub use policy::{PolicyParams, PolicySample, PolicyShape};
pub use route::{Route, RouteSet};
pub use sim::{Environment, RewardConfig, RolloutResult, SimConfig};
pub use state::{encode_state, EnvState, StateEncoding};
pub use trainer::{EpochRecord, StateSampler, TrainConfig, Trainer};
