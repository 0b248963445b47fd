//! Hybrid pose synchronization for networks of rigid bodies on SE(3).
//!
//! Agents connected by a tree exchange relative poses and drive them to a
//! common configuration with a potential-based feedback. Each edge carries a
//! switching angle that is reset when a synergy gap exposes a better
//! potential, which removes the undesired critical points of the smooth law.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
mod eigen;
pub mod error;
pub mod hybridsim;
pub mod liegroup;
pub mod montecarlo;
pub mod network;
pub mod oracle;
pub mod potential;

pub use eigen::symmetric_eigen3;
pub use controller::{body_accel, AgentState, Gains, Inertia, Lyapunov, SwarmDerivative, SyncSystem};
pub use error::{Error, Result};
pub use hybridsim::{
    apply_jumps, do_jumps, in_flow_set, in_jump_set, is_synchronized, simulate, step_flow, CertificateMode,
    HybridEvent, HybridTime, Outcome, RunOptions, SwarmState, Trace, TraceRecord,
};
pub use liegroup::{Pose, Rotation, Twist};
pub use network::{build_topology, EdgeState, Topology};
pub use potential::{
    synth_params, synth_with_overrides, validate_weight, Margins, SynergyOverrides, SynergyParams,
    SynergyWarning, WeightMatrix,
};
pub use config::{Experiment, InitialCondition, RandomInit, SimConfig};
pub use montecarlo::{run_montecarlo, Aggregate, MonteCarloReport, MonteCarloSpec, RunSummary};
pub use oracle::OracleReport;
