//! CSV and text serialization of traces, events and batch results.

use std::fmt::Write as _;
use std::time::Duration;

use posesync::montecarlo::{Aggregate, MonteCarloSpec, RunSummary};
use posesync::{HybridEvent, Outcome, SynergyWarning, TraceRecord};

const PLOT_TEMPLATE: &str = include_str!("../assets/plot.gp");

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn trace_header(m: usize, n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "j".to_string()];
    for prefix in ["theta", "muU", "rotErr", "posErr"] {
        h.extend((1..=m).map(|k| format!("{prefix}_{k}")));
    }
    for i in 1..=n {
        for q in ["omega", "v"] {
            h.extend(["x", "y", "z"].iter().map(|c| format!("{q}_{i}{c}")));
        }
    }
    h.extend(["Vbar", "Ubar", "kinetic"].map(String::from));
    h
}

pub fn trace_csv(records: &[TraceRecord], m: usize, n: usize) -> String {
    let mut out = String::new();
    push_row(&mut out, &trace_header(m, n));
    for r in records {
        let mut row = vec![fmt_f64(r.t), r.j.to_string()];
        for series in [&r.theta, &r.mu, &r.rot_err, &r.pos_err] {
            row.extend(series.iter().copied().map(fmt_f64));
        }
        for tw in &r.twists {
            row.extend(tw.omega.iter().chain(tw.vel.iter()).copied().map(fmt_f64));
        }
        let l = &r.lyapunov;
        row.extend([l.vbar, l.ubar, l.kinetic].map(fmt_f64));
        push_row(&mut out, &row);
    }
    out
}

/// One row per edge reset; simultaneous resets share `t`, `j` and the
/// `Vbar` columns.
pub fn events_csv(events: &[HybridEvent]) -> String {
    let mut out = String::new();
    out.push_str("t,j,edge,theta_before,theta_after,muU,Vbar_before,Vbar_after\n");
    for e in events {
        for (slot, &k) in e.edges.iter().enumerate() {
            push_row(
                &mut out,
                &[
                    fmt_f64(e.time),
                    e.j.to_string(),
                    (k + 1).to_string(),
                    fmt_f64(e.theta_before[slot]),
                    fmt_f64(e.theta_after[slot]),
                    fmt_f64(e.mu[slot]),
                    fmt_f64(e.vbar_before),
                    fmt_f64(e.vbar_after),
                ],
            );
        }
    }
    out
}

pub fn inputs_csv(records: &[TraceRecord], n: usize) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string(), "j".to_string()];
    for i in 1..=n {
        for q in ["tau", "f"] {
            header.extend(["x", "y", "z"].iter().map(|c| format!("{q}_{i}{c}")));
        }
    }
    push_row(&mut out, &header);
    for r in records {
        let mut row = vec![fmt_f64(r.t), r.j.to_string()];
        for u in &r.inputs {
            row.extend(u.omega.iter().chain(u.vel.iter()).copied().map(fmt_f64));
        }
        push_row(&mut out, &row);
    }
    out
}

pub fn plot_script(m: usize, n: usize) -> String {
    PLOT_TEMPLATE
        .replace("@M@", &m.to_string())
        .replace("@N@", &n.to_string())
}

/// `edge_resets` counts individual edge resets; `o.jumps` counts jump
/// instants, at which several edges may reset together.
pub fn summary(o: &Outcome, edge_resets: usize, warnings: &[SynergyWarning], wall: Duration) -> String {
    let mut s = String::new();
    let status = if o.converged { "synchronized" } else { "not synchronized (stalled or out of time)" };
    let _ = writeln!(s, "status: {status}");
    let _ = writeln!(s, "final t: {}", fmt_f64(o.final_time.t));
    let _ = writeln!(s, "final j: {}", o.final_time.j);
    let _ = writeln!(s, "jumps: {}", o.jumps);
    let _ = writeln!(s, "edge resets: {edge_resets}");
    let _ = writeln!(s, "jump budget: {}", o.jump_budget);
    let _ = writeln!(s, "final max rotation error: {}", fmt_f64(o.max_rot_err));
    let _ = writeln!(s, "final max position error: {}", fmt_f64(o.max_pos_err));
    let _ = writeln!(s, "final max twist: {}", fmt_f64(o.max_twist));
    let _ = writeln!(s, "final max |theta|: {}", fmt_f64(o.max_abs_theta));
    let _ = writeln!(s, "initial Vbar: {}", fmt_f64(o.initial_vbar));
    let _ = writeln!(s, "final Vbar: {}", fmt_f64(o.final_vbar));
    let _ = writeln!(s, "max relative Vbar increase along flow: {}", fmt_f64(o.max_flow_increase));
    match o.min_jump_margin {
        Some(x) => {
            let _ = writeln!(s, "min jump decrease beyond k_X delta: {}", fmt_f64(x));
        }
        None => {
            let _ = writeln!(s, "min jump decrease beyond k_X delta: none (no jumps)");
        }
    }
    let _ = writeln!(s, "max edge/agent consistency error: {}", fmt_f64(o.max_consistency_error));
    let cert = if o.certificates_held() {
        "held".to_string()
    } else {
        format!("violated ({} violations)", o.certificate_violations)
    };
    let _ = writeln!(s, "certificates: {cert}");
    for w in warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "wall time: {:.3} s", wall.as_secs_f64());
    s
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn runs_csv(runs: &[RunSummary]) -> String {
    let mut out = String::new();
    out.push_str(
        "run,seed,converged,final_t,jumps,jump_budget,initial_Vbar,final_Vbar,max_flow_increase,min_jump_margin,certificate_violations,max_rot_err,max_pos_err,error\n",
    );
    for r in runs {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        push_row(
            &mut out,
            &[
                r.index.to_string(),
                r.seed.to_string(),
                r.converged.to_string(),
                fmt_f64(r.final_t),
                r.jumps.to_string(),
                r.jump_budget.to_string(),
                fmt_f64(r.initial_vbar),
                fmt_f64(r.final_vbar),
                fmt_f64(r.max_flow_increase),
                opt_f64(r.min_jump_margin),
                r.certificate_violations.to_string(),
                fmt_f64(r.max_rot_err),
                fmt_f64(r.max_pos_err),
                error,
            ],
        );
    }
    out
}

/// Batch summary. Wall time is left out so that a fixed seed gives
/// byte-identical output.
pub fn aggregate(a: &Aggregate, spec: &MonteCarloSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "runs: {}", a.runs);
    let _ = writeln!(s, "seed: {}", spec.seed);
    let _ = writeln!(s, "half box: {}", fmt_f64(spec.half_box));
    let _ = writeln!(s, "twist std: {}", fmt_f64(spec.twist_std));
    let _ = writeln!(s, "converged with certificates: {}", a.converged);
    let _ = writeln!(s, "aborted: {}", a.failed);
    let _ = writeln!(s, "convergence rate: {}", fmt_f64(a.convergence_rate()));
    let _ = writeln!(s, "max jumps: {}", a.max_jumps);
    let _ = writeln!(s, "all within jump budget: {}", a.all_within_budget);
    let _ = writeln!(s, "max relative Vbar increase along flow: {}", fmt_f64(a.max_flow_increase));
    let _ = writeln!(s, "min jump decrease beyond k_X delta: {}", opt_f64(a.min_jump_margin));
    s
}
