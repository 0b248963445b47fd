//! The weighted trace potential on SE(3), its angular-warped extension on
//! SE(3) x R, and the synthesis of the synergy parameters that make the
//! warped potential usable for hybrid switching.
//!
//! With `Gamma = Xbar * exp(theta u_c^)` the modified potential is
//!
//! ```text
//! U(Xbar, theta) = 1/2 tr((I - Gamma) A (I - Gamma)^T) + gamma/2 theta^2
//! ```
//!
//! and `u_c2 = -u_c1^x b / d` keeps the translational term independent of
//! `theta`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen3;
use crate::error::{Error, Result};
use crate::liegroup::{
    adjoint_inv_transpose, psi_bar, rot_angle_axis_unchecked, screw_exp_unchecked, skew, Pose,
    Twist,
};

/// Lower bound on the eigenvalues of `W` (semi-definiteness).
pub const PSD_TOL: f64 = 1e-9;
/// Lower bound on the eigenvalues of `Wbar` (definiteness).
pub const PD_TOL: f64 = 1e-9;
/// `Delta_W*` at or below this is treated as no gap.
pub const GAP_TOL: f64 = 1e-9;
/// Relative tolerance used to detect repeated eigenvalues of `W`.
pub const EIGEN_GAP_TOL: f64 = 1e-9;
/// Two candidate values of `U` closer than this (relative) are a tie in [`jump_g`].
pub const TIE_TOL: f64 = 1e-12;

/// Symmetric weighting matrix `[[A, b], [b^T, d]]` with its derived blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    a: Matrix3<f64>,
    b: Vector3<f64>,
    d: f64,
    full: Matrix4<f64>,
    w: Matrix3<f64>,
    w_bar: Matrix3<f64>,
    eigenvalues: [f64; 3],
    eigenvectors: [Vector3<f64>; 3],
}

impl WeightMatrix {
    /// Validates `(A, b, d)`. `A` is symmetrized first.
    pub fn new(a: Matrix3<f64>, b: Vector3<f64>, d: f64) -> Result<Self> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidScale(d));
        }
        let a = 0.5 * (a + a.transpose());
        let w = a - b * b.transpose() / d;
        let (eigenvalues, eigenvectors) = symmetric_eigen3(&w);
        if eigenvalues[0] < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eig: eigenvalues[0],
            });
        }
        let w_bar = 0.5 * (Matrix3::identity() * w.trace() - w);
        // Wbar shares the eigenvectors of W; its smallest eigenvalue is (l1 + l2) / 2.
        let wbar_min = 0.5 * (eigenvalues[0] + eigenvalues[1]);
        if wbar_min <= PD_TOL {
            return Err(Error::DegenerateWeight { min_eig: wbar_min });
        }

        let mut full = Matrix4::zeros();
        full.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
        full.fixed_view_mut::<3, 1>(0, 3).copy_from(&b);
        full.fixed_view_mut::<1, 3>(3, 0).copy_from(&b.transpose());
        full[(3, 3)] = d;

        Ok(WeightMatrix {
            a,
            b,
            d,
            full,
            w,
            w_bar,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn a(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn b(&self) -> &Vector3<f64> {
        &self.b
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// The assembled 4x4 matrix.
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.full
    }

    pub fn w(&self) -> &Matrix3<f64> {
        &self.w
    }

    pub fn w_bar(&self) -> &Matrix3<f64> {
        &self.w_bar
    }

    /// Eigenvalues of `W`, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    /// Unit eigenvectors of `W` matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> [Vector3<f64>; 3] {
        self.eigenvectors
    }

    /// `b / d`.
    pub fn offset(&self) -> Vector3<f64> {
        self.b / self.d
    }

    /// True when two eigenvalues of `W` coincide within [`EIGEN_GAP_TOL`].
    pub fn has_repeated_eigenvalues(&self) -> bool {
        let [l1, l2, l3] = self.eigenvalues;
        let tol = EIGEN_GAP_TOL * (1.0 + l3.abs());
        l2 - l1 <= tol || l3 - l2 <= tol
    }
}

pub fn validate_weight(a: Matrix3<f64>, b: Vector3<f64>, d: f64) -> Result<WeightMatrix> {
    WeightMatrix::new(a, b, d)
}

/// Which eigenvalue configuration selected the warping direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthesisCase {
    /// `l1 = l2`.
    RepeatedSmallest,
    /// `l2 >= l1 l3 / (l3 - l1)`.
    DominantMiddle,
    /// `l1 < l2 < l1 l3 / (l3 - l1)`.
    Balanced,
    /// Direction supplied by the user instead of synthesized.
    UserSupplied,
}

impl SynthesisCase {
    pub fn number(&self) -> Option<u8> {
        match self {
            SynthesisCase::RepeatedSmallest => Some(1),
            SynthesisCase::DominantMiddle => Some(2),
            SynthesisCase::Balanced => Some(3),
            SynthesisCase::UserSupplied => None,
        }
    }
}

/// Fractions of the admissible range used for `gamma` and `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub gamma: f64,
    pub delta: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            gamma: 0.9,
            delta: 0.75,
        }
    }
}

/// Parameters of the warped potential and the hysteresis gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SynergyParams {
    pub theta_set: Vec<f64>,
    pub u_c1: Vector3<f64>,
    pub u_c2: Vector3<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub theta_max: f64,
    pub case: SynthesisCase,
}

impl SynergyParams {
    pub fn u_c(&self) -> Twist {
        Twist::new(self.u_c1, self.u_c2)
    }

    /// `4 Delta_W* / pi^2`, the strict upper bound for `gamma`.
    pub fn gamma_bound(&self) -> f64 {
        4.0 * self.delta_star / (PI * PI)
    }

    /// `(4 Delta_W* / pi^2 - gamma) theta_M^2 / 2`, the strict upper bound for `delta`.
    pub fn delta_bound(&self) -> f64 {
        (self.gamma_bound() - self.gamma) * self.theta_max * self.theta_max / 2.0
    }

    /// Violated parameter inequalities, if any.
    pub fn check_bounds(&self) -> Vec<SynergyWarning> {
        let mut out = Vec::new();
        if self.delta_star <= GAP_TOL {
            out.push(SynergyWarning::NoGap {
                delta_star: self.delta_star,
            });
        }
        if self.gamma >= self.gamma_bound() {
            out.push(SynergyWarning::GammaBound {
                gamma: self.gamma,
                bound: self.gamma_bound(),
            });
        }
        if self.delta >= self.delta_bound() {
            out.push(SynergyWarning::DeltaBound {
                delta: self.delta,
                bound: self.delta_bound(),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynergyWarning {
    NoGap { delta_star: f64 },
    GammaBound { gamma: f64, bound: f64 },
    DeltaBound { delta: f64, bound: f64 },
}

impl fmt::Display for SynergyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynergyWarning::NoGap { delta_star } => {
                write!(f, "Delta_W* = {delta_star:.6} is not positive")
            }
            SynergyWarning::GammaBound { gamma, bound } => {
                write!(f, "gamma = {gamma} violates gamma < 4 Delta_W*/pi^2 = {bound:.6}")
            }
            SynergyWarning::DeltaBound { delta, bound } => write!(
                f,
                "delta = {delta} violates delta < (4 Delta_W*/pi^2 - gamma) theta_M^2 / 2 = {bound:.6}"
            ),
        }
    }
}

/// User-chosen values that replace synthesized ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynergyOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_set: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_c1: Option<[f64; 3]>,
}

fn validate_theta_set(theta_set: &[f64]) -> Result<f64> {
    if theta_set.is_empty() {
        return Err(Error::InvalidSynergy("theta set is empty".into()));
    }
    let mut theta_max: f64 = 0.0;
    for &t in theta_set {
        if !t.is_finite() || t == 0.0 || t.abs() > PI + 1e-12 {
            return Err(Error::InvalidSynergy(format!(
                "theta set entries need 0 < |theta| <= pi, got {t}"
            )));
        }
        theta_max = theta_max.max(t.abs());
    }
    Ok(theta_max)
}

/// `Delta(v, u) = u^T (tr(W) I - W - 2 v^T W v (I - v v^T)) u`.
pub fn delta_of(v: &Vector3<f64>, u_c1: &Vector3<f64>, w: &WeightMatrix) -> f64 {
    let wm = w.w();
    let vwv = (v.transpose() * wm * v)[0];
    let m = Matrix3::identity() * wm.trace() - wm
        - 2.0 * vwv * (Matrix3::identity() - v * v.transpose());
    (u_c1.transpose() * m * u_c1)[0]
}

/// Smallest [`delta_of`] over the eigenvectors of `W`.
pub fn min_delta(u_c1: &Vector3<f64>, w: &WeightMatrix) -> f64 {
    w.eigenvectors()
        .iter()
        .map(|v| delta_of(v, u_c1, w))
        .fold(f64::INFINITY, f64::min)
}

/// Builds `{Theta, u_c1, u_c2, gamma, delta}` from the eigenstructure of `W`.
///
/// The warping direction is `u_c1 = sum_i alpha_i v_i` with the nonnegative
/// weights fixed by the eigenvalue case; `gamma` and `delta` sit at the given
/// fractions of their admissible intervals. `theta_set` defaults to `{0.3 pi}`.
pub fn synth_params(
    w: &WeightMatrix,
    theta_set: Option<&[f64]>,
    margins: Margins,
) -> Result<SynergyParams> {
    for (name, m) in [("gamma", margins.gamma), ("delta", margins.delta)] {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::InvalidSynergy(format!(
                "{name} margin must lie in (0, 1), got {m}"
            )));
        }
    }
    let theta_set: Vec<f64> = theta_set.map_or_else(|| vec![0.3 * PI], |s| s.to_vec());
    let theta_max = validate_theta_set(&theta_set)?;

    let [l1, l2, l3] = w.eigenvalues();
    let [v1, v2, v3] = w.eigenvectors();
    let (case, alpha_sq, delta_star) = if l2 - l1 <= EIGEN_GAP_TOL * (1.0 + l3.abs()) {
        let r = l2 / l3;
        (
            SynthesisCase::RepeatedSmallest,
            [r / 2.0, r / 2.0, 1.0 - r],
            l1 * (1.0 - r),
        )
    } else if l2 >= l1 * l3 / (l3 - l1) {
        let s = l2 + l3;
        (SynthesisCase::DominantMiddle, [0.0, l2 / s, l3 / s], l1)
    } else {
        let pairs = 2.0 * (l1 * l2 + l1 * l3 + l2 * l3);
        let prod = l1 * l2 * l3;
        (
            SynthesisCase::Balanced,
            [
                1.0 - 4.0 * l2 * l3 / pairs,
                1.0 - 4.0 * l1 * l3 / pairs,
                1.0 - 4.0 * l1 * l2 / pairs,
            ],
            4.0 * prod / pairs,
        )
    };
    if !(delta_star > GAP_TOL) {
        return Err(Error::NoSynergyGap { delta_star });
    }

    let alpha = alpha_sq.map(|a| a.max(0.0).sqrt());
    let u_c1 = (alpha[0] * v1 + alpha[1] * v2 + alpha[2] * v3).normalize();
    let achieved = min_delta(&u_c1, w);
    if achieved < delta_star - 1e-9 {
        return Err(Error::InvalidSynergy(format!(
            "synthesized direction attains Delta = {achieved}, below Delta_W* = {delta_star}"
        )));
    }

    let gamma_bound = 4.0 * delta_star / (PI * PI);
    let gamma = margins.gamma * gamma_bound;
    let delta = margins.delta * (gamma_bound - gamma) * theta_max * theta_max / 2.0;
    Ok(SynergyParams {
        theta_set,
        u_c1,
        u_c2: coupled_translation_axis(&u_c1, w),
        gamma,
        delta,
        delta_star,
        theta_max,
        case,
    })
}

/// `u_c2 = -u_c1^x b / d`.
pub fn coupled_translation_axis(u_c1: &Vector3<f64>, w: &WeightMatrix) -> Vector3<f64> {
    -(skew(u_c1) * w.offset())
}

/// Synthesizes parameters and then applies user overrides.
///
/// Overrides that break the strict parameter inequalities are kept and
/// reported as warnings. Non-positive `gamma` or `delta` are rejected.
pub fn synth_with_overrides(
    w: &WeightMatrix,
    overrides: &SynergyOverrides,
    margins: Margins,
) -> Result<(SynergyParams, Vec<SynergyWarning>)> {
    let mut p = synth_params(w, overrides.theta_set.as_deref(), margins)?;
    if let Some(u) = overrides.u_c1 {
        let u = Vector3::from(u);
        let n = u.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidAxis { norm: n });
        }
        p.u_c1 = u / n;
        p.u_c2 = coupled_translation_axis(&p.u_c1, w);
        p.delta_star = min_delta(&p.u_c1, w);
        p.case = SynthesisCase::UserSupplied;
    }
    let gamma_bound = p.gamma_bound();
    p.gamma = match overrides.gamma {
        Some(g) if !(g > 0.0) || !g.is_finite() => {
            return Err(Error::InvalidSynergy(format!("gamma must be positive, got {g}")));
        }
        Some(g) => g,
        None => margins.gamma * gamma_bound,
    };
    p.delta = match overrides.delta {
        Some(dl) if !(dl > 0.0) || !dl.is_finite() => {
            return Err(Error::InvalidSynergy(format!("delta must be positive, got {dl}")));
        }
        Some(dl) => dl,
        None => {
            let dl = margins.delta * p.delta_bound();
            if !(dl > 0.0) {
                return Err(Error::InvalidSynergy(format!(
                    "gamma = {} leaves no admissible delta (bound {})",
                    p.gamma,
                    p.delta_bound()
                )));
            }
            dl
        }
    };
    let warnings = p.check_bounds();
    for warning in &warnings {
        log::warn!("synergy parameter override: {warning}");
    }
    Ok((p, warnings))
}

fn trace_form(e: &Matrix4<f64>, a: &Matrix4<f64>) -> f64 {
    0.5 * (e * a * e.transpose()).trace()
}

/// `V(Xbar) = 1/2 tr((I - Xbar) A (I - Xbar)^T)`.
pub fn potential_v(xbar: &Pose, w: &WeightMatrix) -> f64 {
    let e = Matrix4::identity() - xbar.to_homogeneous();
    trace_form(&e, w.matrix())
}

/// Same value as [`potential_v`] via the `W` / `d` split.
pub fn potential_v_explicit(xbar: &Pose, w: &WeightMatrix) -> f64 {
    let er = Matrix3::identity() - xbar.rotation_matrix();
    let rot = 0.5 * (er * w.w() * er.transpose()).trace();
    let trans = xbar.translation - er * w.offset();
    rot + 0.5 * w.d() * trans.norm_squared()
}

/// `Gamma(Xbar, theta) = Xbar exp(theta u_c^)`.
pub fn warp(xbar: &Pose, theta: f64, p: &SynergyParams) -> Pose {
    xbar.compose(&screw_exp_unchecked(theta, &p.u_c()))
}

pub fn potential_u(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> f64 {
    let e = Matrix4::identity() - warp(xbar, theta, p).to_homogeneous();
    trace_form(&e, w.matrix()) + 0.5 * p.gamma * theta * theta
}

/// Same value as [`potential_u`] via the rotation/translation split.
pub fn potential_u_explicit(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> f64 {
    let r = xbar.rotation_matrix() * rot_angle_axis_unchecked(theta, &p.u_c1).matrix();
    let rot = (w.w() * (Matrix3::identity() - r)).trace();
    let er = Matrix3::identity() - xbar.rotation_matrix();
    let trans = xbar.translation - er * w.offset();
    rot + 0.5 * p.gamma * theta * theta + 0.5 * w.d() * trans.norm_squared()
}

/// Both gradients of `U` at one edge state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGradient {
    /// `psibar_grad(Xbar, theta)`, the body-frame pose gradient.
    pub pose: Vector6<f64>,
    /// `d U / d theta`.
    pub theta: f64,
}

impl EdgeGradient {
    pub fn norm(&self) -> f64 {
        (self.pose.norm_squared() + self.theta * self.theta).sqrt()
    }
}

pub fn gradients(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> EdgeGradient {
    let uc = p.u_c();
    let t = screw_exp_unchecked(theta, &uc);
    let gamma_inv = xbar.compose(&t).inverse();
    let core = psi_bar(&((Matrix4::identity() - gamma_inv.to_homogeneous()) * w.matrix()));
    EdgeGradient {
        pose: adjoint_inv_transpose(&t) * core,
        theta: p.gamma * theta + 2.0 * uc.to_vector().dot(&core),
    }
}

/// `psibar_grad = Ad_{T(theta)}^{-T} psibar((I - Gamma^{-1}) A)`.
pub fn grad_pose(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> Vector6<f64> {
    gradients(xbar, theta, w, p).pose
}

/// `gamma theta + 2 u_c^T psibar((I - Gamma^{-1}) A)`.
pub fn grad_theta(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> f64 {
    gradients(xbar, theta, w, p).theta
}

/// `U(Xbar, theta) - min over Theta of U(Xbar, theta')`.
pub fn mu_u(xbar: &Pose, theta: f64, w: &WeightMatrix, p: &SynergyParams) -> f64 {
    let best = p
        .theta_set
        .iter()
        .map(|&t| potential_u(xbar, t, w, p))
        .fold(f64::INFINITY, f64::min);
    potential_u(xbar, theta, w, p) - best
}

/// A minimizer of `U(Xbar, .)` over `Theta`. Ties go to the smallest
/// magnitude, then to the positive angle.
pub fn jump_g(xbar: &Pose, _theta: f64, w: &WeightMatrix, p: &SynergyParams) -> f64 {
    let values: Vec<(f64, f64)> = p
        .theta_set
        .iter()
        .map(|&t| (t, potential_u(xbar, t, w, p)))
        .collect();
    let best = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * (1.0 + best.abs());
    values
        .iter()
        .filter(|(_, u)| *u <= best + tol)
        .map(|&(t, _)| t)
        .min_by(|a, b| {
            a.abs()
                .total_cmp(&b.abs())
                .then_with(|| b.total_cmp(a))
        })
        .expect("theta set is non-empty")
}

/// Critical points of `V`: the identity and the half-turns about the
/// eigenvectors of `W`, with the matching translation.
#[derive(Debug, Clone)]
pub struct CriticalSet {
    /// `poses[0]` is the identity; `poses[i]` is the half-turn about `axes[i - 1]`.
    pub poses: Vec<Pose>,
    pub axes: [Vector3<f64>; 3],
    /// Set when `W` has a repeated eigenvalue; the eigenvectors are then a
    /// computed basis of a continuum of critical axes.
    pub degenerate: bool,
}

impl CriticalSet {
    pub fn undesired(&self) -> impl Iterator<Item = (&Vector3<f64>, &Pose)> {
        self.axes.iter().zip(self.poses.iter().skip(1))
    }
}

pub fn critical_pose(axis: &Vector3<f64>, w: &WeightMatrix) -> Pose {
    let r = rot_angle_axis_unchecked(PI, axis);
    let t = (Matrix3::identity() - r.matrix()) * w.offset();
    Pose::new(r, t)
}

pub fn enumerate_critical(w: &WeightMatrix) -> CriticalSet {
    let axes = w.eigenvectors();
    let degenerate = w.has_repeated_eigenvalues();
    if degenerate {
        log::warn!("W has repeated eigenvalues; critical axes form a continuum");
    }
    let mut poses = vec![Pose::identity()];
    poses.extend(axes.iter().map(|v| critical_pose(v, w)));
    CriticalSet {
        poses,
        axes,
        degenerate,
    }
}
