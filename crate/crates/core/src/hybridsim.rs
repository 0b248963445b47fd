//! Hybrid execution engine: fixed-step RK4 flows, jumps of the switching
//! angles, hybrid time bookkeeping and the Lyapunov certificates checked at
//! runtime.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::controller::{AgentState, Lyapunov, SwarmDerivative, SyncSystem};
use crate::error::{Error, Result};
use crate::liegroup::{Pose, Twist};
use crate::network::{relative_pose, EdgeState};
use crate::potential::{jump_g, mu_u, potential_u, SynergyParams, WeightMatrix};

/// Allowed per-step increase of `Vbar` along flows, relative to `1 + Vbar`.
pub const FLOW_SLACK: f64 = 1e-8;
/// Allowed shortfall of the jump decrease below `k_X delta`.
pub const JUMP_SLACK: f64 = 1e-9;
/// Drift between integrated edge poses and `X_j^{-1} X_i` above which a
/// warning is logged. Monitored only.
pub const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

/// Full closed-loop state in edge coordinates plus the agents' world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub edges: Vec<EdgeState>,
    pub agents: Vec<AgentState>,
    pub time: HybridTime,
}

impl SwarmState {
    /// Builds edge states from agent poses with all switching angles at `theta0`.
    pub fn from_agents(system: &SyncSystem, agents: Vec<AgentState>, theta0: f64) -> Self {
        let edges = system
            .topology
            .edges()
            .iter()
            .map(|&(i, j)| EdgeState::new(relative_pose(&agents[i].pose, &agents[j].pose), theta0))
            .collect();
        SwarmState {
            edges,
            agents,
            time: HybridTime::default(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.edges
            .iter()
            .all(|e| e.rel_pose.is_finite() && e.theta.is_finite())
            && self.agents.iter().all(|a| {
                a.pose.is_finite() && a.twist.to_vector().iter().all(|x| x.is_finite())
            })
    }

    /// Largest `|Xbar_k - X_j^{-1} X_i|_F` over edges.
    pub fn consistency_error(&self, system: &SyncSystem) -> f64 {
        system
            .topology
            .edges()
            .iter()
            .zip(&self.edges)
            .map(|(&(i, j), e)| {
                let recomputed = relative_pose(&self.agents[i].pose, &self.agents[j].pose);
                (e.rel_pose.to_homogeneous() - recomputed.to_homogeneous()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `x + h * dx`, without renormalization.
    fn advanced(&self, dx: &SwarmDerivative, h: f64) -> SwarmState {
        let shift = |p: &Pose, d: &Matrix4<f64>| Pose::from_homogeneous(&(p.to_homogeneous() + h * d));
        let edges = self
            .edges
            .iter()
            .zip(&dx.edge_pose)
            .zip(&dx.theta)
            .map(|((e, dp), dt)| EdgeState::new(shift(&e.rel_pose, dp), e.theta + h * dt))
            .collect();
        let agents = self
            .agents
            .iter()
            .zip(&dx.agent_pose)
            .zip(&dx.twist)
            .map(|((a, dp), dxi)| AgentState {
                pose: shift(&a.pose, dp),
                twist: Twist::from_vector(&(a.twist.to_vector() + h * dxi.to_vector())),
                inertia: a.inertia,
            })
            .collect();
        SwarmState {
            edges,
            agents,
            time: self.time,
        }
    }
}

/// True when `mu_U >= delta`.
pub fn in_jump_set(edge: &EdgeState, w: &WeightMatrix, p: &SynergyParams) -> bool {
    mu_u(&edge.rel_pose, edge.theta, w, p) >= p.delta
}

/// True when `mu_U <= delta`.
pub fn in_flow_set(edge: &EdgeState, w: &WeightMatrix, p: &SynergyParams) -> bool {
    mu_u(&edge.rel_pose, edge.theta, w, p) <= p.delta
}

/// One jump of the closed loop: every edge in its jump set switches at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridEvent {
    pub time: f64,
    /// Jump counter after the event.
    pub j: usize,
    pub edges: Vec<usize>,
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
    pub mu: Vec<f64>,
    pub vbar_before: f64,
    pub vbar_after: f64,
}

/// Applies the jump map to every edge with `mu_U >= delta`, without
/// checking the decrease certificate.
pub fn apply_jumps(swarm: &SwarmState, system: &SyncSystem) -> Result<(SwarmState, HybridEvent)> {
    let (w, p) = (&system.weight, &system.params);
    let before = system.lyapunov(swarm).vbar;
    let mut next = swarm.clone();
    let mut edges = Vec::new();
    let mut theta_before = Vec::new();
    let mut theta_after = Vec::new();
    let mut mus = Vec::new();
    for (k, e) in swarm.edges.iter().enumerate() {
        let mu = mu_u(&e.rel_pose, e.theta, w, p);
        if mu >= p.delta {
            let target = jump_g(&e.rel_pose, e.theta, w, p);
            next.edges[k].theta = target;
            edges.push(k);
            theta_before.push(e.theta);
            theta_after.push(target);
            mus.push(mu);
        }
    }
    if edges.is_empty() {
        return Err(Error::NotInJumpSet);
    }
    next.time.j += 1;
    let after = system.lyapunov(&next).vbar;
    let event = HybridEvent {
        time: swarm.time.t,
        j: next.time.j,
        edges,
        theta_before,
        theta_after,
        mu: mus,
        vbar_before: before,
        vbar_after: after,
    };
    Ok((next, event))
}

fn jump_shortfall(event: &HybridEvent, system: &SyncSystem) -> Option<String> {
    let required = system.gains.k_x * system.params.delta;
    let drop = event.vbar_before - event.vbar_after;
    (drop < required - JUMP_SLACK)
        .then(|| format!("jump decreased Vbar by {drop} < k_X delta = {required}"))
}

/// [`apply_jumps`] followed by the check that `Vbar` dropped by at least
/// `k_X delta`.
pub fn do_jumps(swarm: &SwarmState, system: &SyncSystem) -> Result<(SwarmState, HybridEvent)> {
    let (next, event) = apply_jumps(swarm, system)?;
    if let Some(detail) = jump_shortfall(&event, system) {
        return Err(Error::CertificateViolation {
            t: event.time,
            j: event.j,
            detail,
        });
    }
    Ok((next, event))
}

/// One classical RK4 step of the flow, followed by pose renormalization.
pub fn step_flow(swarm: &SwarmState, system: &SyncSystem, h: f64) -> Result<SwarmState> {
    let k1 = system.flow_field(swarm);
    let k2 = system.flow_field(&swarm.advanced(&k1, h / 2.0));
    let k3 = system.flow_field(&swarm.advanced(&k2, h / 2.0));
    let k4 = system.flow_field(&swarm.advanced(&k3, h));

    let combine_m = |a: &[Matrix4<f64>], b: &[Matrix4<f64>], c: &[Matrix4<f64>], d: &[Matrix4<f64>]| {
        (0..a.len())
            .map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0)
            .collect::<Vec<_>>()
    };
    let slope = SwarmDerivative {
        edge_pose: combine_m(&k1.edge_pose, &k2.edge_pose, &k3.edge_pose, &k4.edge_pose),
        theta: (0..k1.theta.len())
            .map(|i| (k1.theta[i] + 2.0 * k2.theta[i] + 2.0 * k3.theta[i] + k4.theta[i]) / 6.0)
            .collect(),
        agent_pose: combine_m(&k1.agent_pose, &k2.agent_pose, &k3.agent_pose, &k4.agent_pose),
        twist: (0..k1.twist.len())
            .map(|i| {
                Twist::from_vector(
                    &((k1.twist[i].to_vector()
                        + 2.0 * k2.twist[i].to_vector()
                        + 2.0 * k3.twist[i].to_vector()
                        + k4.twist[i].to_vector())
                        / 6.0),
                )
            })
            .collect(),
    };

    let mut next = swarm.advanced(&slope, h);
    for e in &mut next.edges {
        e.rel_pose = e.rel_pose.renormalize();
    }
    for a in &mut next.agents {
        a.pose = a.pose.renormalize();
    }
    next.time.t = swarm.time.t + h;
    if !next.is_finite() {
        return Err(Error::NumericalDivergence {
            t: next.time.t,
            j: next.time.j,
        });
    }
    Ok(next)
}

/// What to do when a runtime certificate fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateMode {
    /// Abort the run with [`Error::CertificateViolation`].
    #[default]
    Strict,
    /// Count the violation and keep going.
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub h: f64,
    pub t_end: f64,
    pub eps_sync: f64,
    pub sample_interval: f64,
    pub disable_jumps: bool,
    pub certificates: CertificateMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            h: 1e-3,
            t_end: 30.0,
            eps_sync: 1e-3,
            sample_interval: 1e-2,
            disable_jumps: false,
            certificates: CertificateMode::Strict,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.t_end >= 0.0) || !(self.eps_sync > 0.0) || !(self.sample_interval > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "integrator settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One sampled row of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub j: usize,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub potential: Vec<f64>,
    pub rot_err: Vec<f64>,
    pub pos_err: Vec<f64>,
    pub twists: Vec<Twist>,
    pub inputs: Vec<Twist>,
    /// Largest `|(psibar_grad, dU/dtheta)|` over edges.
    pub max_grad: f64,
    pub lyapunov: Lyapunov,
}

impl TraceRecord {
    pub fn capture(swarm: &SwarmState, system: &SyncSystem) -> Self {
        let (w, p) = (&system.weight, &system.params);
        let grads = system.edge_gradients(swarm);
        TraceRecord {
            t: swarm.time.t,
            j: swarm.time.j,
            theta: swarm.edges.iter().map(|e| e.theta).collect(),
            mu: swarm
                .edges
                .iter()
                .map(|e| mu_u(&e.rel_pose, e.theta, w, p))
                .collect(),
            potential: swarm
                .edges
                .iter()
                .map(|e| potential_u(&e.rel_pose, e.theta, w, p))
                .collect(),
            rot_err: swarm.edges.iter().map(|e| e.rel_pose.rotation_error()).collect(),
            pos_err: swarm.edges.iter().map(|e| e.rel_pose.translation.norm()).collect(),
            twists: swarm.agents.iter().map(|a| a.twist).collect(),
            inputs: system.control_inputs(swarm),
            max_grad: grads.iter().map(|g| g.norm()).fold(0.0, f64::max),
            lyapunov: system.lyapunov(swarm),
        }
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub final_time: HybridTime,
    pub jumps: usize,
    /// `ceil(Vbar(0, 0) / (k_X delta))`.
    pub jump_budget: usize,
    pub initial_vbar: f64,
    pub final_vbar: f64,
    /// Largest observed per-step flow increase of `Vbar`, relative to `1 + Vbar`.
    pub max_flow_increase: f64,
    /// Smallest observed `(Vbar_before - Vbar_after) - k_X delta` over jumps.
    pub min_jump_margin: Option<f64>,
    pub max_consistency_error: f64,
    pub certificate_violations: usize,
    pub max_rot_err: f64,
    pub max_pos_err: f64,
    pub max_twist: f64,
    pub max_abs_theta: f64,
}

impl Outcome {
    pub fn certificates_held(&self) -> bool {
        self.certificate_violations == 0 && self.jumps <= self.jump_budget
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub events: Vec<HybridEvent>,
    pub outcome: Outcome,
    pub final_state: SwarmState,
}

/// True when every edge is within `eps` of the target and every agent is at rest.
pub fn is_synchronized(swarm: &SwarmState, eps: f64) -> bool {
    swarm
        .edges
        .iter()
        .all(|e| e.rel_pose.distance_to_identity() < eps && e.theta.abs() < eps)
        && swarm.agents.iter().all(|a| a.twist.to_vector().norm() < eps)
}

fn jump_budget(initial_vbar: f64, system: &SyncSystem) -> usize {
    (initial_vbar / (system.gains.k_x * system.params.delta)).ceil() as usize
}

/// Runs the hybrid closed loop from `initial` until synchronization or `t_end`.
///
/// A jump is taken whenever some edge has `mu_U >= delta`; otherwise the
/// system flows for one step of length `h`.
pub fn simulate(system: &SyncSystem, initial: SwarmState, opts: &RunOptions) -> Result<Trace> {
    opts.validate()?;
    let (w, p) = (&system.weight, &system.params);
    let initial_vbar = system.lyapunov(&initial).vbar;
    let budget = jump_budget(initial_vbar, system);
    let sample_every = ((opts.sample_interval / opts.h).round() as usize).max(1);
    let total_steps = (opts.t_end / opts.h).round() as usize;

    let mut state = initial;
    let mut records = vec![TraceRecord::capture(&state, system)];
    let mut events: Vec<HybridEvent> = Vec::new();
    let mut steps = 0usize;
    let mut steps_since_jump: Option<usize> = None;
    let mut violations = 0usize;
    let mut max_flow_increase: f64 = f64::NEG_INFINITY;
    let mut min_jump_margin: Option<f64> = None;
    let mut max_consistency: f64 = state.consistency_error(system);
    let mut converged = false;
    let mut drift_reported = false;

    let violate = |t: f64, j: usize, detail: String, count: &mut usize| -> Result<()> {
        match opts.certificates {
            CertificateMode::Strict => Err(Error::CertificateViolation { t, j, detail }),
            CertificateMode::Warn => {
                log::warn!("certificate violated at t = {t}, j = {j}: {detail}");
                *count += 1;
                Ok(())
            }
        }
    };

    loop {
        if is_synchronized(&state, opts.eps_sync) {
            converged = true;
            break;
        }
        if steps >= total_steps {
            break;
        }

        let wants_jump = !opts.disable_jumps
            && state
                .edges
                .iter()
                .any(|e| mu_u(&e.rel_pose, e.theta, w, p) >= p.delta);
        if wants_jump {
            if steps_since_jump == Some(0) {
                violate(
                    state.time.t,
                    state.time.j,
                    "two jumps without an intervening flow step".into(),
                    &mut violations,
                )?;
            }
            let (next, event) = apply_jumps(&state, system)?;
            if let Some(detail) = jump_shortfall(&event, system) {
                violate(event.time, event.j, detail, &mut violations)?;
            }
            let margin = (event.vbar_before - event.vbar_after) - system.gains.k_x * p.delta;
            min_jump_margin = Some(min_jump_margin.map_or(margin, |m: f64| m.min(margin)));
            state = next;
            if state.time.j > budget {
                violate(
                    state.time.t,
                    state.time.j,
                    format!("jump count exceeds the budget {budget}"),
                    &mut violations,
                )?;
            }
            events.push(event);
            records.push(TraceRecord::capture(&state, system));
            steps_since_jump = Some(0);
            continue;
        }

        let before = system.lyapunov(&state).vbar;
        let mut next = step_flow(&state, system, opts.h)?;
        steps += 1;
        next.time.t = steps as f64 * opts.h;
        let after = system.lyapunov(&next).vbar;
        let increase = (after - before) / (1.0 + before);
        max_flow_increase = max_flow_increase.max(increase);
        if increase > FLOW_SLACK {
            violate(
                next.time.t,
                next.time.j,
                format!("Vbar increased along the flow from {before} to {after}"),
                &mut violations,
            )?;
        }
        let consistency = next.consistency_error(system);
        max_consistency = max_consistency.max(consistency);
        if consistency > CONSISTENCY_TOL && !drift_reported {
            log::warn!(
                "edge poses drifted {consistency:.3e} from the agent poses at t = {}",
                next.time.t
            );
            drift_reported = true;
        }
        state = next;
        steps_since_jump = steps_since_jump.map(|s| s + 1);
        if steps.is_multiple_of(sample_every) {
            records.push(TraceRecord::capture(&state, system));
        }
    }

    let last = records.last().expect("initial record");
    if last.t != state.time.t || last.j != state.time.j {
        records.push(TraceRecord::capture(&state, system));
    }
    let fin = records.last().expect("final record").clone();
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0, |a: f64, b: f64| a.max(b.abs()));
    let outcome = Outcome {
        converged,
        final_time: state.time,
        jumps: state.time.j,
        jump_budget: budget,
        initial_vbar,
        final_vbar: fin.lyapunov.vbar,
        max_flow_increase: if steps == 0 { 0.0 } else { max_flow_increase },
        min_jump_margin,
        max_consistency_error: max_consistency,
        certificate_violations: violations,
        max_rot_err: max_of(&fin.rot_err),
        max_pos_err: max_of(&fin.pos_err),
        max_twist: fin
            .twists
            .iter()
            .map(|t| t.to_vector().norm())
            .fold(0.0, f64::max),
        max_abs_theta: max_of(&fin.theta),
    };
    Ok(Trace {
        records,
        events,
        outcome,
        final_state: state,
    })
}
