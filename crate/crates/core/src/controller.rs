//! Rigid-body dynamics and the distributed feedback law.
//!
//! Each agent applies
//!
//! ```text
//! u_i = -k_X sum_{k in M_i} Bbar_ik psibar_grad(Xbar_k, theta_k) - k_xi xi_i - k_e sum_{j in N_i} (xi_i - xi_j)
//! ```
//!
//! and every edge carries `theta_k' = -k_theta dU/dtheta_k` while flowing.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybridsim::SwarmState;
use crate::liegroup::{adjoint_inv_transpose, wedge, Twist};
use crate::network::{relative_twist, Topology};
use crate::potential::{gradients, potential_u, EdgeGradient, SynergyParams, WeightMatrix};

/// Mass-inertia `blkdiag(J, m I_3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia {
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
    mass: f64,
}

impl Inertia {
    pub fn new(j: Matrix3<f64>, mass: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInertia(format!("mass must be positive, got {mass}")));
        }
        if (j - j.transpose()).amax() > 1e-9 * (1.0 + j.amax()) {
            return Err(Error::InvalidInertia("J is not symmetric".into()));
        }
        let j = 0.5 * (j + j.transpose());
        let min_eig = j.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidInertia(format!(
                "J must be positive definite (smallest eigenvalue {min_eig})"
            )));
        }
        let j_inv = j
            .try_inverse()
            .ok_or_else(|| Error::InvalidInertia("J is singular".into()))?;
        Ok(Inertia { j, j_inv, mass })
    }

    pub fn j(&self) -> &Matrix3<f64> {
        &self.j
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.j);
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.mass * Matrix3::identity()));
        m
    }

    /// `I xi`.
    pub fn momentum(&self, xi: &Twist) -> Twist {
        Twist::new(self.j * xi.omega, self.mass * xi.vel)
    }

    /// `I^{-1} w`, blockwise.
    pub fn solve(&self, w: &Twist) -> Twist {
        Twist::new(self.j_inv * w.omega, w.vel / self.mass)
    }

    /// `xi^T I xi`.
    pub fn kinetic(&self, xi: &Twist) -> f64 {
        xi.to_vector().dot(&self.momentum(xi).to_vector())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: crate::liegroup::Pose,
    pub twist: Twist,
    pub inertia: Inertia,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k_x: f64,
    pub k_xi: f64,
    pub k_e: f64,
    pub k_theta: f64,
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("k_x", self.k_x),
            ("k_xi", self.k_xi),
            ("k_e", self.k_e),
            ("k_theta", self.k_theta),
        ] {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::InvalidConfig(format!("gain {name} must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// `xi' = I^{-1}(ad_xi^T I xi + u)`.
pub fn body_accel(state: &AgentState, u: &Twist) -> Twist {
    let xi = &state.twist;
    let h = state.inertia.momentum(xi);
    // ad_xi^T (h_w, h_v) = (-w x h_w - v x h_v, -w x h_v)
    let coriolis = Twist::new(
        -xi.omega.cross(&h.omega) - xi.vel.cross(&h.vel),
        -xi.omega.cross(&h.vel),
    );
    let total = Twist::from_vector(&(coriolis.to_vector() + u.to_vector()));
    state.inertia.solve(&total)
}

/// Time derivative of a [`SwarmState`]. Pose rates are 4x4 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmDerivative {
    pub edge_pose: Vec<Matrix4<f64>>,
    pub theta: Vec<f64>,
    pub agent_pose: Vec<Matrix4<f64>>,
    pub twist: Vec<Twist>,
}

/// `Vbar = k_X Ubar + kinetic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lyapunov {
    pub vbar: f64,
    pub ubar: f64,
    pub kinetic: f64,
}

/// A network of agents with its potential, synergy parameters and gains.
#[derive(Debug, Clone)]
pub struct SyncSystem {
    pub topology: Topology,
    pub weight: WeightMatrix,
    pub params: SynergyParams,
    pub gains: Gains,
}

impl SyncSystem {
    pub fn new(
        topology: Topology,
        weight: WeightMatrix,
        params: SynergyParams,
        gains: Gains,
    ) -> Result<Self> {
        gains.validate()?;
        Ok(SyncSystem {
            topology,
            weight,
            params,
            gains,
        })
    }

    pub fn edge_gradients(&self, swarm: &SwarmState) -> Vec<EdgeGradient> {
        swarm
            .edges
            .iter()
            .map(|e| gradients(&e.rel_pose, e.theta, &self.weight, &self.params))
            .collect()
    }

    /// `sum_k Bbar_ik psibar_grad_k` for agent `i`.
    fn pose_feedback(&self, i: usize, swarm: &SwarmState, grads: &[EdgeGradient]) -> Vector6<f64> {
        let mut acc = Vector6::zeros();
        for &k in self.topology.positive_edges(i) {
            acc += grads[k].pose;
        }
        for &k in self.topology.negative_edges(i) {
            acc -= adjoint_inv_transpose(&swarm.edges[k].rel_pose) * grads[k].pose;
        }
        acc
    }

    fn input_with(&self, i: usize, swarm: &SwarmState, grads: &[EdgeGradient]) -> Twist {
        let g = &self.gains;
        let xi_i = swarm.agents[i].twist.to_vector();
        let mut relative = Vector6::zeros();
        for &j in self.topology.neighbors(i) {
            relative += xi_i - swarm.agents[j].twist.to_vector();
        }
        let u = -g.k_x * self.pose_feedback(i, swarm, grads) - g.k_xi * xi_i - g.k_e * relative;
        Twist::from_vector(&u)
    }

    /// Control input `u_i = (tau_i, f_i)` of agent `i`.
    pub fn control_input(&self, i: usize, swarm: &SwarmState) -> Twist {
        let grads = self.edge_gradients(swarm);
        self.input_with(i, swarm, &grads)
    }

    pub fn control_inputs(&self, swarm: &SwarmState) -> Vec<Twist> {
        let grads = self.edge_gradients(swarm);
        (0..swarm.agents.len())
            .map(|i| self.input_with(i, swarm, &grads))
            .collect()
    }

    /// `xi_bar_k` from the agents' twists and the edge's own relative pose.
    pub fn edge_twist(&self, k: usize, swarm: &SwarmState) -> Twist {
        let (i, j) = self.topology.edge(k);
        relative_twist(
            &swarm.agents[i].twist,
            &swarm.agents[j].twist,
            &swarm.edges[k].rel_pose,
        )
    }

    /// Closed-loop flow field.
    pub fn flow_field(&self, swarm: &SwarmState) -> SwarmDerivative {
        let grads = self.edge_gradients(swarm);
        let edge_pose = (0..swarm.edges.len())
            .map(|k| swarm.edges[k].rel_pose.to_homogeneous() * wedge(&self.edge_twist(k, swarm)))
            .collect();
        let theta = grads
            .iter()
            .map(|g| -self.gains.k_theta * g.theta)
            .collect();
        let agent_pose = swarm
            .agents
            .iter()
            .map(|a| a.pose.to_homogeneous() * wedge(&a.twist))
            .collect();
        let twist = swarm
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| body_accel(a, &self.input_with(i, swarm, &grads)))
            .collect();
        SwarmDerivative {
            edge_pose,
            theta,
            agent_pose,
            twist,
        }
    }

    pub fn lyapunov(&self, swarm: &SwarmState) -> Lyapunov {
        let ubar = swarm
            .edges
            .iter()
            .map(|e| potential_u(&e.rel_pose, e.theta, &self.weight, &self.params))
            .sum::<f64>();
        let kinetic = swarm
            .agents
            .iter()
            .map(|a| a.inertia.kinetic(&a.twist))
            .sum::<f64>();
        Lyapunov {
            vbar: self.gains.k_x * ubar + kinetic,
            ubar,
            kinetic,
        }
    }

    /// `|(B^T kron I_6) xi|^2`, the sum of squared edge velocity differences.
    pub fn edge_velocity_norm_sq(&self, swarm: &SwarmState) -> f64 {
        self.topology
            .edges()
            .iter()
            .map(|&(i, j)| (swarm.agents[i].twist.to_vector() - swarm.agents[j].twist.to_vector()).norm_squared())
            .sum()
    }

    /// Predicted `d Vbar / dt` along the flow:
    /// `-k_X k_theta |Psi_theta|^2 - 2 k_xi |xi|^2 - 2 k_e |B xi|^2`.
    pub fn lyapunov_rate(&self, swarm: &SwarmState) -> f64 {
        let g = &self.gains;
        let grads = self.edge_gradients(swarm);
        let theta_sq: f64 = grads.iter().map(|e| e.theta * e.theta).sum();
        let xi_sq: f64 = swarm
            .agents
            .iter()
            .map(|a| a.twist.to_vector().norm_squared())
            .sum();
        -g.k_x * g.k_theta * theta_sq - 2.0 * g.k_xi * xi_sq - 2.0 * g.k_e * self.edge_velocity_norm_sq(swarm)
    }
}
