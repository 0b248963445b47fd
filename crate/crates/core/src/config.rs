//! Experiment description: everything needed to build a [`SyncSystem`] and
//! its initial state. Serializable so front ends can read it from text.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{AgentState, Gains, Inertia, SyncSystem};
use crate::error::{Error, Result};
use crate::hybridsim::{CertificateMode, RunOptions, SwarmState};
use crate::liegroup::{rot_angle_axis, Pose, Rotation, Twist};
use crate::network::{relative_pose, EdgeState, Topology};
use crate::potential::{synth_with_overrides, Margins, SynergyOverrides, SynergyWarning, WeightMatrix};

type Mat3 = [[f64; 3]; 3];

fn mat3(m: &Mat3) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| m[r][c])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub n_agents: usize,
    /// 1-indexed `(positive end, negative end)` pairs.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaMatrix {
    Diagonal([f64; 3]),
    Full(Mat3),
}

impl InertiaMatrix {
    fn matrix(&self) -> Matrix3<f64> {
        match self {
            InertiaMatrix::Diagonal(d) => Matrix3::from_diagonal(&Vector3::from(*d)),
            InertiaMatrix::Full(m) => mat3(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaConfig {
    pub mass: f64,
    pub j: InertiaMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Row-major.
    pub a: Mat3,
    pub b: [f64; 3],
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynergyConfig {
    #[serde(flatten)]
    pub overrides: SynergyOverrides,
    #[serde(default)]
    pub margins: Margins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationSpec {
    AxisAngle { axis: [f64; 3], angle: f64 },
    Matrix(Mat3),
}

impl RotationSpec {
    fn rotation(&self) -> Result<Rotation> {
        match self {
            RotationSpec::AxisAngle { axis, angle } => {
                let u = Vector3::from(*axis);
                let n = u.norm();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::InvalidAxis { norm: n });
                }
                rot_angle_axis(*angle, &(u / n))
            }
            RotationSpec::Matrix(m) => Rotation::new(mat3(m)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub rotation: RotationSpec,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationSampling {
    /// Uniform (Haar) on SO(3).
    #[default]
    Haar,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomInit {
    pub seed: u64,
    /// Translations are uniform in `[-half_box, half_box]^3`.
    #[serde(default = "default_half_box")]
    pub half_box: f64,
    /// Standard deviation of each twist component; zero gives agents at rest.
    #[serde(default)]
    pub twist_std: f64,
    #[serde(default)]
    pub rotations: RotationSampling,
}

fn default_half_box() -> f64 {
    5.0
}

impl RandomInit {
    pub fn with_seed(self, seed: u64) -> Self {
        RandomInit { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialCondition {
    /// Agents at alternating quarter turns about a common axis, placed so
    /// every edge starts at an undesired critical point.
    Fig2,
    Explicit {
        poses: Vec<PoseSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        twists: Option<Vec<[f64; 6]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
    },
    Random(RandomInit),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub h: f64,
    pub t_end: f64,
    pub eps_sync: f64,
    pub sample_interval: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let d = RunOptions::default();
        IntegratorConfig {
            h: d.h,
            t_end: d.t_end,
            eps_sync: d.eps_sync,
            sample_interval: d.sample_interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Flags {
    #[serde(default)]
    pub disable_jumps: bool,
    #[serde(default)]
    pub certificates: CertificateMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    /// One entry shared by every agent, or one per agent.
    pub inertia: Vec<InertiaConfig>,
    pub weight: WeightConfig,
    #[serde(default)]
    pub synergy: SynergyConfig,
    pub gains: Gains,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub initial: InitialCondition,
    #[serde(default)]
    pub flags: Flags,
}

/// Axis shared by the quarter-turn initial rotations of the `fig2` preset.
pub const FIG2_AXIS: [f64; 3] = [0.2686, 0.8549, 0.4438];

/// Everything derived from a [`SimConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: SyncSystem,
    pub initial: SwarmState,
    pub options: RunOptions,
    pub warnings: Vec<SynergyWarning>,
}

impl SimConfig {
    /// The six-agent scenario with quarter-turn initial rotations.
    pub fn fig2() -> Self {
        SimConfig {
            topology: TopologyConfig {
                n_agents: 6,
                edges: vec![(1, 2), (2, 3), (3, 4), (2, 5), (5, 6)],
            },
            inertia: vec![InertiaConfig {
                mass: 2.4,
                j: InertiaMatrix::Diagonal([0.043, 0.041, 0.082]),
            }],
            weight: WeightConfig {
                a: [
                    [69.02, 56.08, 61.19],
                    [56.08, 56.25, 51.17],
                    [61.19, 51.17, 57.66],
                ],
                b: [18.24, 14.43, 15.96],
                d: 5.0,
            },
            synergy: SynergyConfig {
                overrides: SynergyOverrides {
                    theta_set: Some(vec![0.3 * std::f64::consts::PI]),
                    gamma: Some(0.33),
                    delta: Some(0.02),
                    u_c1: None,
                },
                margins: Margins::default(),
            },
            gains: Gains {
                k_x: 100.0,
                k_xi: 1.0,
                k_e: 0.6,
                k_theta: 1.0,
            },
            integrator: IntegratorConfig::default(),
            initial: InitialCondition::Fig2,
            flags: Flags::default(),
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fig2" => Ok(Self::fig2()),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            h: self.integrator.h,
            t_end: self.integrator.t_end,
            eps_sync: self.integrator.eps_sync,
            sample_interval: self.integrator.sample_interval,
            disable_jumps: self.flags.disable_jumps,
            certificates: self.flags.certificates,
        }
    }

    /// Checks every cross-field constraint and builds the experiment.
    pub fn build(&self) -> Result<Experiment> {
        let n = self.topology.n_agents;
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least two agents are required, got {n}"
            )));
        }
        let topology = Topology::new(n, &self.topology.edges)?;
        let inertias = self.inertias()?;
        let w = &self.weight;
        let weight = WeightMatrix::new(mat3(&w.a), Vector3::from(w.b), w.d)?;
        let (params, warnings) =
            synth_with_overrides(&weight, &self.synergy.overrides, self.synergy.margins)?;
        let system = SyncSystem::new(topology, weight, params, self.gains)?;
        let options = self.run_options();
        options.validate()?;
        let initial = self.initial_state(&system, &inertias)?;
        Ok(Experiment {
            system,
            initial,
            options,
            warnings,
        })
    }

    fn inertias(&self) -> Result<Vec<Inertia>> {
        let n = self.topology.n_agents;
        let built = self
            .inertia
            .iter()
            .map(|c| Inertia::new(c.j.matrix(), c.mass))
            .collect::<Result<Vec<_>>>()?;
        match built.len() {
            1 => Ok(vec![built[0]; n]),
            len if len == n => Ok(built),
            len => Err(Error::InvalidConfig(format!(
                "expected 1 or {n} inertia entries, got {len}"
            ))),
        }
    }

    fn initial_state(&self, system: &SyncSystem, inertias: &[Inertia]) -> Result<SwarmState> {
        let n = inertias.len();
        let m = system.topology.n_edges();
        let at_rest = |poses: Vec<Pose>, twists: Vec<Twist>| -> Vec<AgentState> {
            poses
                .into_iter()
                .zip(twists)
                .zip(inertias)
                .map(|((pose, twist), &inertia)| AgentState {
                    pose,
                    twist,
                    inertia,
                })
                .collect()
        };
        match &self.initial {
            InitialCondition::Fig2 => {
                let poses = fig2_poses(n, system.weight.offset());
                Ok(SwarmState::from_agents(
                    system,
                    at_rest(poses, vec![Twist::zero(); n]),
                    0.0,
                ))
            }
            InitialCondition::Explicit {
                poses,
                twists,
                theta,
            } => {
                if poses.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "expected {n} initial poses, got {}",
                        poses.len()
                    )));
                }
                let poses = poses
                    .iter()
                    .map(|p| Ok(Pose::new(p.rotation.rotation()?, Vector3::from(p.translation))))
                    .collect::<Result<Vec<_>>>()?;
                let twists = match twists {
                    None => vec![Twist::zero(); n],
                    Some(t) if t.len() == n => t
                        .iter()
                        .map(|x| Twist::from_vector(&nalgebra::Vector6::from(*x)))
                        .collect(),
                    Some(t) => {
                        return Err(Error::InvalidConfig(format!(
                            "expected {n} initial twists, got {}",
                            t.len()
                        )))
                    }
                };
                let mut state = SwarmState::from_agents(system, at_rest(poses, twists), 0.0);
                if let Some(theta) = theta {
                    if theta.len() != m {
                        return Err(Error::InvalidConfig(format!(
                            "expected {m} initial switching angles, got {}",
                            theta.len()
                        )));
                    }
                    for (e, &t) in state.edges.iter_mut().zip(theta) {
                        e.theta = t;
                    }
                }
                Ok(state)
            }
            InitialCondition::Random(spec) => {
                let agents = random_agents(spec, inertias)?;
                Ok(SwarmState::from_agents(system, agents, 0.0))
            }
        }
    }
}

/// Quarter turns of alternating sign about [`FIG2_AXIS`], with translations
/// `(I - R_i) b / d`.
pub fn fig2_poses(n: usize, offset: Vector3<f64>) -> Vec<Pose> {
    let axis = Vector3::from(FIG2_AXIS).normalize();
    (0..n)
        .map(|i| {
            let angle = if i % 2 == 0 { -FRAC_PI_2 } else { FRAC_PI_2 };
            let r = rot_angle_axis(angle, &axis).expect("unit axis");
            let p = (Matrix3::identity() - r.matrix()) * offset;
            Pose::new(r, p)
        })
        .collect()
}

/// Uniform rotation: uniform axis on the sphere and angle with density
/// `(1 - cos t) / pi` on `[0, pi]`, sampled by inverting the CDF
/// `(t - sin t) / pi` with Newton steps.
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let axis = loop {
        let v = Vector3::from_fn(|_, _| normal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    let target = rng.random::<f64>() * std::f64::consts::PI;
    let angle = invert_angle_cdf(target);
    rot_angle_axis(angle, &axis).expect("unit axis")
}

/// Solves `t - sin t = target` for `t` in `[0, pi]`.
pub(crate) fn invert_angle_cdf(target: f64) -> f64 {
    // (t - sin t) ~ t^3 / 6 near zero
    let mut t = (6.0 * target).cbrt().min(std::f64::consts::PI);
    for _ in 0..60 {
        let f = t - t.sin() - target;
        let df = 1.0 - t.cos();
        if df < 1e-300 {
            break;
        }
        let step = f / df;
        t = (t - step).clamp(0.0, std::f64::consts::PI);
        if step.abs() < 1e-15 {
            break;
        }
    }
    t
}

/// Random agent states drawn from `spec`.
pub fn random_agents(spec: &RandomInit, inertias: &[Inertia]) -> Result<Vec<AgentState>> {
    if !(spec.half_box >= 0.0) || !(spec.twist_std >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "random initialization needs nonnegative box and twist spread: {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(inertias
        .iter()
        .map(|&inertia| {
            let rotation = match spec.rotations {
                RotationSampling::Haar => haar_rotation(&mut rng),
                RotationSampling::Identity => Rotation::identity(),
            };
            let translation = Vector3::from_fn(|_, _| {
                if spec.half_box > 0.0 {
                    rng.random_range(-spec.half_box..=spec.half_box)
                } else {
                    0.0
                }
            });
            let twist = nalgebra::Vector6::from_fn(|_, _| spec.twist_std * normal.sample(&mut rng));
            AgentState {
                pose: Pose::new(rotation, translation),
                twist: Twist::from_vector(&twist),
                inertia,
            }
        })
        .collect())
}

/// Edge states of the `fig2` preset, for checks that do not need agents.
pub fn fig2_edges(system: &SyncSystem) -> Vec<EdgeState> {
    let poses = fig2_poses(system.topology.n_agents(), system.weight.offset());
    system
        .topology
        .edges()
        .iter()
        .map(|&(i, j)| EdgeState::new(relative_pose(&poses[i], &poses[j]), 0.0))
        .collect()
}
