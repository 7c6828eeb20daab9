//! Quantized simplex gossip: agents holding categorical beliefs exchange
//! soft or quantized messages over a complete graph.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod observables;
pub mod protocol;
pub mod rng;
pub mod simplex;
pub mod theory;

pub use channel::{effective_bandwidth, emit_message, Bandwidth, ChannelKind, ChannelSpec};
pub use dynamics::{
    detect_absorption, run, run_ensemble, run_ensemble_trajectories, run_trial, select_pair, step, EnsembleResult,
    InitSpec, PopulationState, Probe, SimConfig, StopRule, Terminal, TerminationReason, Trajectory, TrialSummary,
};
pub use error::{QsgError, Result};
pub use observables::{observe, ObservableRecord};
pub use rng::RandomSource;
pub use simplex::{Label, SimplexVector};
