//! Deterministic federated-learning simulator.
//!
//! Devices hold label-skewed partitions of a synthetic classification task.
//! An optional two-phase plugin first tops up under-represented classes on
//! each device with synthetic samples ([`augment`]) and then lets the server
//! pick the `K` devices whose class mix is closest to uniform ([`sampling`]).
//! Local training uses a linear softmax model with FedAvg, FedProx or FedRS
//! objectives and an AdamW optimizer ([`learner`]); [`engine`] runs the rounds.

pub mod augment;
pub mod config;
pub mod engine;
pub mod error;
pub mod learner;
pub mod rng;
pub mod sampling;
pub mod sweep;
pub mod taskgen;

pub use config::{parse_config, ExperimentConfig};
pub use engine::{run_experiment, RoundRecord, RunSummary};
pub use error::{Error, Result};
pub use sweep::{run_sweep, SweepSpec};
