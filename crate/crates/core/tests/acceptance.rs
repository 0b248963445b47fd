//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line and
//! then asserts. Tests hold a shared lock so runtime limits measure one
//! criterion at a time.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posesync::hybridsim::{apply_jumps, simulate, step_flow, SwarmState, Trace};
use posesync::liegroup::{ad_small, adjoint, psi_bar, wedge_vec, Twist};
use posesync::montecarlo::{run_montecarlo, MonteCarloReport, MonteCarloSpec};
use posesync::oracle::{exp_check, gap_check, gradcheck, random_pose, rank_check};
use posesync::potential::{synth_params, Margins};
use posesync::{SimConfig, SyncSystem};

const IDENTITY_SAMPLES: usize = 1000;
const FLOW_SLACK: f64 = 1e-8;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

// written to the raw stderr handle, which the test harness does not capture
fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} : {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn fig2() -> posesync::Experiment {
    SimConfig::fig2().build().expect("preset builds")
}

fn random_matrix4(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    Matrix4::from_fn(|_, _| rng.random_range(-3.0..3.0))
}

fn random_vector6(rng: &mut ChaCha8Rng) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.random_range(-3.0..3.0))
}

#[test]
fn criterion_1_lie_group_identities() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];

    for _ in 0..IDENTITY_SAMPLES {
        let m = random_matrix4(&mut rng);
        let x = random_vector6(&mut rng);
        let lhs = (m.transpose() * wedge_vec(&x)).trace();
        let rhs = 2.0 * x.dot(&psi_bar(&m));
        worst[0] = worst[0].max((lhs - rhs).abs() / (1.0 + m.norm() * x.norm()));
    }
    for _ in 0..IDENTITY_SAMPLES {
        let xp = random_pose(&mut rng, 3.0);
        let x = xp.to_homogeneous();
        let m = random_matrix4(&mut rng);
        let lhs = psi_bar(&(x.transpose() * (Matrix4::identity() - x) * m));
        let rhs = -psi_bar(&((Matrix4::identity() - xp.inverse().to_homogeneous()) * m));
        worst[1] = worst[1].max((lhs - rhs).norm() / (1.0 + m.norm()));
    }
    for _ in 0..IDENTITY_SAMPLES {
        let x = random_pose(&mut rng, 3.0);
        let err = (adjoint(&x.inverse()) * adjoint(&x) - nalgebra::Matrix6::identity()).norm();
        worst[2] = worst[2].max(err);
    }
    for _ in 0..IDENTITY_SAMPLES {
        let x = random_pose(&mut rng, 3.0);
        let v = random_vector6(&mut rng);
        let lhs = x.to_homogeneous() * wedge_vec(&v) * x.inverse().to_homogeneous();
        let rhs = wedge_vec(&(adjoint(&x) * v));
        worst[3] = worst[3].max((lhs - rhs).norm() / (1.0 + v.norm()));
    }
    for _ in 0..IDENTITY_SAMPLES {
        let v = random_vector6(&mut rng);
        let err = (ad_small(&Twist::from_vector(&v)) * v).norm();
        worst[4] = worst[4].max(err / (1.0 + v.norm_squared()));
    }
    let exp = exp_check(IDENTITY_SAMPLES, 102);
    let elapsed = start.elapsed();

    let identities_ok = worst.iter().all(|&e| e < 1e-9);
    let pass = identities_ok && exp.passed && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        &format!(
            "scaled residuals: trace pairing {:.2e}, psibar transport {:.2e}, Ad inverse {:.2e}, Ad conjugation {:.2e}, ad self {:.2e}; screw exp {:.2e}; {:.2?}",
            worst[0], worst[1], worst[2], worst[3], worst[4], exp.value, elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let exp = fig2();
    let w = &exp.system.weight;
    let synthesized = synth_params(w, None, Margins::default()).unwrap();
    let a = gradcheck(w, &synthesized, 500, 201);
    let b = gradcheck(w, &exp.system.params, 500, 202);
    let elapsed = start.elapsed();
    let pass = a.passed && b.passed && elapsed < Duration::from_secs(10);
    report(
        2,
        pass,
        &format!(
            "max relative error {:.2e} (synthesized), {:.2e} (preset overrides) on 500 states each; {:.2?}",
            a.value, b.value, elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_synergy_gap() {
    let _guard = serial();
    let exp = fig2();
    let w = &exp.system.weight;
    let synthesized = synth_params(w, None, Margins::default()).unwrap();
    let a = gap_check(w, &synthesized);
    let b = gap_check(w, &exp.system.params);
    let pass = a.passed && b.passed;
    report(
        3,
        pass,
        &format!(
            "synthesized: residual {:.2e}, {}; preset overrides: residual {:.2e}, {}",
            a.value, a.detail, b.value, b.detail
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_incidence_rank() {
    let _guard = serial();
    let start = Instant::now();
    let r = rank_check(2..=8, 50, 401);
    let elapsed = start.elapsed();
    let pass = r.passed && r.samples == 350 && elapsed < Duration::from_secs(30);
    report(
        4,
        pass,
        &format!(
            "{} assignments, smallest sigma_min/sigma_max {:.3e}, {}; {:.2?}",
            r.samples, r.value, r.detail, elapsed
        ),
    );
    assert!(pass);
}

fn preset_run(disable_jumps: bool) -> (SyncSystem, Trace, Duration) {
    let mut config = SimConfig::fig2();
    config.flags.disable_jumps = disable_jumps;
    let exp = config.build().unwrap();
    let start = Instant::now();
    let trace = simulate(&exp.system, exp.initial, &exp.options).expect("run completes");
    (exp.system, trace, start.elapsed())
}

#[test]
fn criterion_5_preset_reproduction() {
    let _guard = serial();
    let (system, trace, elapsed) = preset_run(false);
    let target = 0.3 * PI;
    let edge_jumps: usize = trace.events.iter().map(|e| e.edges.len()).sum();
    let first = &trace.events[0];
    let jumps_ok = edge_jumps == system.topology.n_edges()
        && trace.events.iter().all(|e| e.time == 0.0)
        && first.theta_before.iter().all(|&t| t == 0.0)
        && first.theta_after.iter().all(|&t| (t - target).abs() < 1e-12);
    let o = &trace.outcome;
    let monotone = o.max_flow_increase <= FLOW_SLACK && o.certificate_violations == 0;
    let fin = trace.records.last().unwrap();
    let max = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let twist = fin.twists.iter().map(|t| t.to_vector().norm()).fold(0.0, f64::max);
    let settled = fin.t <= 30.0
        && max(&fin.rot_err) < 1e-2
        && max(&fin.pos_err) < 1e-2
        && twist < 1e-2
        && max(&fin.theta) < 1e-2;
    let fast = elapsed < Duration::from_secs(60);
    let pass = jumps_ok && monotone && settled && fast;
    let events: Vec<String> = trace
        .events
        .iter()
        .map(|e| format!("t={:.3}:{:?}", e.time, e.edges.iter().map(|k| k + 1).collect::<Vec<_>>()))
        .collect();
    report(
        5,
        pass,
        &format!(
            "edge jumps {edge_jumps} in events [{}] (all at t=0: {jumps_ok}); max flow increase {:.2e}; \
             at t={:.3}: rotErr {:.2e}, posErr {:.2e}, twist {:.2e}, theta {:.2e}; {:.2?}",
            events.join(", "),
            o.max_flow_increase,
            fin.t,
            max(&fin.rot_err),
            max(&fin.pos_err),
            twist,
            max(&fin.theta),
            elapsed
        ),
    );
    assert!(pass);
}

fn montecarlo() -> &'static (MonteCarloReport, Duration) {
    static REPORT: OnceLock<(MonteCarloReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let mut base = SimConfig::fig2();
        base.integrator.t_end = 60.0;
        // h = 1e-3 is past the RK4 stability limit for the stiffest
        // far-apart starts in the box
        base.integrator.h = 5e-4;
        let spec = MonteCarloSpec {
            runs: 50,
            seed: 2024,
            ..MonteCarloSpec::default()
        };
        let start = Instant::now();
        let report = run_montecarlo(&base, &spec).expect("batch runs");
        (report, start.elapsed())
    })
}

#[test]
fn criterion_6_jump_certificates() {
    let _guard = serial();
    let (system, trace, _) = preset_run(false);
    let required = system.gains.k_x * system.params.delta;
    let preset_margin = trace
        .events
        .iter()
        .map(|e| (e.vbar_before - e.vbar_after) - required)
        .fold(f64::INFINITY, f64::min);
    let preset_ok = preset_margin >= -1e-9 && trace.outcome.jumps <= trace.outcome.jump_budget;

    let (mc, _) = montecarlo();
    let mc_margin = mc.aggregate.min_jump_margin.unwrap_or(f64::INFINITY);
    let mc_ok = mc.aggregate.failed == 0 && mc.aggregate.all_within_budget && mc_margin >= -1e-9;
    let pass = preset_ok && mc_ok;
    report(
        6,
        pass,
        &format!(
            "smallest jump decrease beyond k_X delta: preset {preset_margin:.3e}, batch {mc_margin:.3e}; \
             preset jumps {} <= budget {}; batch max jumps {}, all within budget {}",
            trace.outcome.jumps,
            trace.outcome.jump_budget,
            mc.aggregate.max_jumps,
            mc.aggregate.all_within_budget
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_stall_without_jumps() {
    let _guard = serial();
    let (_, trace, _) = preset_run(true);
    let t_end = SimConfig::fig2().integrator.t_end;
    let tail: Vec<_> = trace.records.iter().filter(|r| r.t >= t_end - 5.0).collect();
    let max_grad = tail.iter().map(|r| r.max_grad).fold(0.0, f64::max);
    let min_rot = tail
        .iter()
        .flat_map(|r| r.rot_err.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let pass = !trace.outcome.converged && !tail.is_empty() && max_grad < 1e-8 && min_rot > 1.0;
    let initial = &trace.records[0];
    report(
        7,
        pass,
        &format!(
            "initial gradient norm {:.2e}; converged {} at t={:.3}; final-5s samples {}, max gradient {:.2e}, min rotErr {:.2e}",
            initial.max_grad,
            trace.outcome.converged,
            trace.outcome.final_time.t,
            tail.len(),
            max_grad,
            min_rot
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_monte_carlo() {
    let _guard = serial();
    let (mc, elapsed) = montecarlo();
    let agg = &mc.aggregate;
    let pass = agg.runs == 50 && agg.converged == 50 && *elapsed < Duration::from_secs(600);
    let slowest = mc.runs.iter().map(|r| r.final_t).fold(0.0, f64::max);
    report(
        8,
        pass,
        &format!(
            "{}/{} converged with certificates (aborted {}), slowest at t={slowest:.2}, max jumps {}; {elapsed:.2?}",
            agg.converged, agg.runs, agg.failed, agg.max_jumps
        ),
    );
    assert!(pass);
}

fn flow_for(state: &SwarmState, system: &SyncSystem, h: f64, duration: f64) -> SwarmState {
    let steps = (duration / h).round() as usize;
    let mut s = state.clone();
    for _ in 0..steps {
        s = step_flow(&s, system, h).unwrap();
    }
    s
}

fn state_distance(a: &SwarmState, b: &SwarmState) -> f64 {
    let edges: f64 = a
        .edges
        .iter()
        .zip(&b.edges)
        .map(|(x, y)| {
            (x.rel_pose.to_homogeneous() - y.rel_pose.to_homogeneous()).norm_squared()
                + (x.theta - y.theta).powi(2)
        })
        .sum();
    let agents: f64 = a
        .agents
        .iter()
        .zip(&b.agents)
        .map(|(x, y)| {
            (x.pose.to_homogeneous() - y.pose.to_homogeneous()).norm_squared()
                + (x.twist.to_vector() - y.twist.to_vector()).norm_squared()
        })
        .sum();
    (edges + agents).sqrt()
}

#[test]
fn criterion_9_integrator_order() {
    let _guard = serial();
    let exp = fig2();
    let (start, _) = apply_jumps(&exp.initial, &exp.system).unwrap();
    let h = 1e-3;
    let reference = flow_for(&start, &exp.system, h / 64.0, 1.0);
    let coarse = state_distance(&flow_for(&start, &exp.system, h, 1.0), &reference);
    let fine = state_distance(&flow_for(&start, &exp.system, h / 2.0, 1.0), &reference);
    let order = (coarse / fine).log2();
    let pass = order >= 3.5;
    report(
        9,
        pass,
        &format!("terminal error {coarse:.3e} at h={h}, {fine:.3e} at h/2; observed order {order:.2}"),
    );
    assert!(pass);
}
