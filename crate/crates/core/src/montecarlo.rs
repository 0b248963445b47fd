//! Batches of runs from random initial conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InitialCondition, RandomInit, RotationSampling, SimConfig};
use crate::error::{Error, Result};
use crate::hybridsim::simulate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub runs: usize,
    pub seed: u64,
    pub half_box: f64,
    pub twist_std: f64,
    pub rotations: RotationSampling,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        MonteCarloSpec {
            runs: 50,
            seed: 0,
            half_box: 5.0,
            twist_std: 0.0,
            rotations: RotationSampling::Haar,
        }
    }
}

/// Seed of run `index`, drawn from stream `index` of a generator keyed by `seed`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    pub final_t: f64,
    pub jumps: usize,
    pub jump_budget: usize,
    pub initial_vbar: f64,
    pub final_vbar: f64,
    pub max_flow_increase: f64,
    pub min_jump_margin: Option<f64>,
    pub certificate_violations: usize,
    pub max_rot_err: f64,
    pub max_pos_err: f64,
    /// Set when the run aborted.
    pub error: Option<String>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.error.is_none()
            && self.converged
            && self.certificate_violations == 0
            && self.jumps <= self.jump_budget
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub converged: usize,
    pub failed: usize,
    pub max_jumps: usize,
    pub all_within_budget: bool,
    /// Largest per-step relative `Vbar` increase along flows over all runs.
    pub max_flow_increase: f64,
    /// Smallest jump decrease in excess of `k_X delta` over all runs.
    pub min_jump_margin: Option<f64>,
}

impl Aggregate {
    pub fn convergence_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.converged as f64 / self.runs as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

/// Runs `spec.runs` copies of `base` with random initial conditions. Runs
/// execute in parallel; the report is ordered by run index and independent
/// of scheduling.
pub fn run_montecarlo(base: &SimConfig, spec: &MonteCarloSpec) -> Result<MonteCarloReport> {
    if spec.runs == 0 {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    // surface configuration errors before spawning work
    base.build()?;
    let runs: Vec<RunSummary> = (0..spec.runs)
        .into_par_iter()
        .map(|index| single_run(base, spec, index))
        .collect();
    let aggregate = aggregate(&runs);
    Ok(MonteCarloReport { runs, aggregate })
}

fn single_run(base: &SimConfig, spec: &MonteCarloSpec, index: usize) -> RunSummary {
    let seed = run_seed(spec.seed, index);
    let mut config = base.clone();
    config.initial = InitialCondition::Random(RandomInit {
        seed,
        half_box: spec.half_box,
        twist_std: spec.twist_std,
        rotations: spec.rotations,
    });
    let failed = |error: Error| RunSummary {
        index,
        seed,
        converged: false,
        final_t: f64::NAN,
        jumps: 0,
        jump_budget: 0,
        initial_vbar: f64::NAN,
        final_vbar: f64::NAN,
        max_flow_increase: f64::NAN,
        min_jump_margin: None,
        certificate_violations: 0,
        max_rot_err: f64::NAN,
        max_pos_err: f64::NAN,
        error: Some(error.to_string()),
    };
    let exp = match config.build() {
        Ok(exp) => exp,
        Err(e) => return failed(e),
    };
    match simulate(&exp.system, exp.initial, &exp.options) {
        Ok(trace) => {
            let o = trace.outcome;
            RunSummary {
                index,
                seed,
                converged: o.converged,
                final_t: o.final_time.t,
                jumps: o.jumps,
                jump_budget: o.jump_budget,
                initial_vbar: o.initial_vbar,
                final_vbar: o.final_vbar,
                max_flow_increase: o.max_flow_increase,
                min_jump_margin: o.min_jump_margin,
                certificate_violations: o.certificate_violations,
                max_rot_err: o.max_rot_err,
                max_pos_err: o.max_pos_err,
                error: None,
            }
        }
        Err(e) => failed(e),
    }
}

fn aggregate(runs: &[RunSummary]) -> Aggregate {
    let finished: Vec<&RunSummary> = runs.iter().filter(|r| r.error.is_none()).collect();
    Aggregate {
        runs: runs.len(),
        converged: runs.iter().filter(|r| r.ok()).count(),
        failed: runs.len() - finished.len(),
        max_jumps: finished.iter().map(|r| r.jumps).max().unwrap_or(0),
        all_within_budget: finished.iter().all(|r| r.jumps <= r.jump_budget),
        max_flow_increase: finished
            .iter()
            .map(|r| r.max_flow_increase)
            .fold(f64::NEG_INFINITY, f64::max),
        min_jump_margin: finished
            .iter()
            .filter_map(|r| r.min_jump_margin)
            .reduce(f64::min),
    }
}
