//! Numerical oracles run on demand: finite-difference gradient checks, the
//! incidence rank property, the synergy gap at the critical points, and the
//! screw exponential against a series.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::haar_rotation;
use crate::error::{Error, Result};
use crate::liegroup::{screw_exp, wedge, wedge_vec, Pose, Twist};
use crate::network::{incidence_bbar, numerical_rank, Topology, RANK_TOL};
use crate::potential::{
    delta_of, enumerate_critical, gradients, mu_u, potential_u, SynergyParams, WeightMatrix,
};

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_EPS: f64 = 1e-6;
pub const CHAIN_TOL: f64 = 1e-9;
pub const EXP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: &'static str,
    pub samples: usize,
    /// The checked statistic; `passed` compares it against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl OracleReport {
    /// Converts a failed report into [`Error::OracleFailure`].
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::OracleFailure(format!(
                "{}: {} (tolerance {}) {}",
                self.name, self.value, self.tolerance, self.detail
            )))
        }
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm4(m: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = m.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings as i32);
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..=24 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Random pose: Haar rotation, translation with independent normal entries of
/// standard deviation `spread`.
pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Pose {
    let r = haar_rotation(rng);
    let p = Vector3::from_fn(|_, _| spread * (2.0 * rng.random::<f64>() - 1.0));
    Pose::new(r, p)
}

/// Compares the closed-form gradients with central differences of `U`
/// along right-multiplied coordinate twists and along `theta`.
///
/// Pose components are compared against `2 psibar_grad`. The error of each
/// component is `|fd - an| / max(1, |an|)`.
pub fn gradcheck(w: &WeightMatrix, p: &SynergyParams, samples: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = GRADCHECK_EPS;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = random_pose(&mut rng, 2.0);
        let theta = rng.random_range(-PI..PI);
        let g = gradients(&x, theta, w, p);
        for i in 0..6 {
            let mut e = Vector6::zeros();
            e[i] = eps;
            let plus = Pose::from_homogeneous(&(x.to_homogeneous() * expm4(&wedge_vec(&e))));
            let minus = Pose::from_homogeneous(&(x.to_homogeneous() * expm4(&wedge_vec(&-e))));
            let fd = (potential_u(&plus, theta, w, p) - potential_u(&minus, theta, w, p)) / (2.0 * eps);
            let an = 2.0 * g.pose[i];
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
        let fd = (potential_u(&x, theta + eps, w, p) - potential_u(&x, theta - eps, w, p)) / (2.0 * eps);
        worst = worst.max((fd - g.theta).abs() / g.theta.abs().max(1.0));
    }
    OracleReport {
        name: "gradcheck",
        samples,
        value: worst,
        tolerance: GRADCHECK_TOL,
        passed: worst < GRADCHECK_TOL,
        detail: format!("max relative error over {samples} states, eps = {eps}"),
    }
}

/// Random tree on `n` vertices: vertex `v` attaches to a uniformly chosen
/// earlier vertex, with random orientation, then vertex labels are shuffled.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Topology {
    let mut labels: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let edges: Vec<(usize, usize)> = (1..n)
        .map(|v| {
            let u = rng.random_range(0..v);
            let (a, b) = (labels[v], labels[u]);
            if rng.random::<bool>() {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    Topology::new(n, &edges).expect("attachment construction yields a tree")
}

/// Numerical rank of `Bbar` on random trees with `n` in `sizes` and
/// `trials` random pose assignments each. The value is the smallest
/// `sigma_min / sigma_max` seen.
pub fn rank_check(sizes: std::ops::RangeInclusive<usize>, trials: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ratio = f64::INFINITY;
    let mut rank_failures = 0;
    let mut samples = 0;
    for n in sizes {
        for _ in 0..trials {
            let t = random_tree(&mut rng, n);
            let poses: Vec<Pose> = (0..t.n_edges()).map(|_| random_pose(&mut rng, 3.0)).collect();
            let bbar: DMatrix<f64> = incidence_bbar(&t, &poses);
            let r = numerical_rank(&bbar, RANK_TOL);
            if r.rank != 6 * n - 6 {
                rank_failures += 1;
            }
            worst_ratio = worst_ratio.min(r.ratio());
            samples += 1;
        }
    }
    OracleReport {
        name: "rank",
        samples,
        value: worst_ratio,
        tolerance: RANK_TOL,
        passed: rank_failures == 0 && worst_ratio > RANK_TOL,
        detail: format!("{rank_failures} assignments below full column rank"),
    }
}

/// Per critical point and warp angle, the residual of
/// `U(X, t') = U(X, 0) - 2 sin^2(t'/2) Delta(v, u_c1) + gamma t'^2 / 2`,
/// and the gap `mu_U(X, 0) - delta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEntry {
    pub axis: [f64; 3],
    pub theta_prime: f64,
    pub chain_residual: f64,
    pub mu: f64,
    pub delta: f64,
}

pub fn gap_entries(w: &WeightMatrix, p: &SynergyParams) -> Vec<GapEntry> {
    let crit = enumerate_critical(w);
    let mut out = Vec::new();
    for (v, x) in crit.undesired() {
        let u0 = potential_u(x, 0.0, w, p);
        let mu = mu_u(x, 0.0, w, p);
        let dv = delta_of(v, &p.u_c1, w);
        for &tp in &p.theta_set {
            let s = (tp / 2.0).sin();
            let predicted = u0 - 2.0 * s * s * dv + p.gamma * tp * tp / 2.0;
            out.push(GapEntry {
                axis: [v.x, v.y, v.z],
                theta_prime: tp,
                chain_residual: (potential_u(x, tp, w, p) - predicted).abs(),
                mu,
                delta: p.delta,
            });
        }
    }
    out
}

/// Passes when every chain residual is below [`CHAIN_TOL`] and every
/// undesired critical point has `mu_U > delta`. The value is the largest residual.
pub fn gap_check(w: &WeightMatrix, p: &SynergyParams) -> OracleReport {
    let entries = gap_entries(w, p);
    let residual = entries.iter().map(|e| e.chain_residual).fold(0.0, f64::max);
    let min_margin = entries
        .iter()
        .map(|e| e.mu - e.delta)
        .fold(f64::INFINITY, f64::min);
    OracleReport {
        name: "gap",
        samples: entries.len(),
        value: residual,
        tolerance: CHAIN_TOL,
        passed: !entries.is_empty() && residual < CHAIN_TOL && min_margin > 0.0,
        detail: format!("smallest mu_U - delta = {min_margin}"),
    }
}

/// Largest `|screw_exp(t, u_c) - expm(t u_c^)|_F` over random `|t| <= pi`,
/// unit rotation axes and translation axes with entries in `[-4, 4]`.
pub fn exp_check(samples: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let axis = haar_rotation(&mut rng).matrix().column(0).into_owned();
        let trans = Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0));
        let uc = Twist::new(axis, trans);
        let theta = rng.random_range(-PI..=PI);
        let closed = screw_exp(theta, &uc).expect("unit axis").to_homogeneous();
        let series = expm4(&(theta * wedge(&uc)));
        worst = worst.max((closed - series).norm());
    }
    OracleReport {
        name: "exp",
        samples,
        value: worst,
        tolerance: EXP_TOL,
        passed: worst < EXP_TOL,
        detail: "screw exponential against the series exponential".into(),
    }
}
