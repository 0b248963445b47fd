//! Interaction graph and the incidence structure coupling agents to edges.
//!
//! Every edge `k = (i, j)` has a positive end `i` and a negative end `j`;
//! the relative pose is `Xbar_k = X_j^{-1} X_i`.

use std::collections::HashSet;

use nalgebra::{DMatrix, Matrix6};

use crate::error::{Error, Result};
use crate::liegroup::{adjoint, adjoint_inv_transpose, Pose, Twist};

/// Relative threshold on singular values used by [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-9;

/// Per-edge state: relative pose and the switching angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeState {
    pub rel_pose: Pose,
    pub theta: f64,
}

impl EdgeState {
    pub fn new(rel_pose: Pose, theta: f64) -> Self {
        EdgeState { rel_pose, theta }
    }
}

/// An oriented tree over `n` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    positive: Vec<Vec<usize>>,
    negative: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from 1-indexed `(positive end, negative end)` pairs.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::MalformedGraph("graph has no vertices".into()));
        }
        let mut seen = HashSet::new();
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::MalformedGraph(format!(
                    "edge ({i}, {j}) has a vertex outside 1..={n}"
                )));
            }
            if i == j {
                return Err(Error::MalformedGraph(format!("self-loop at vertex {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::MalformedGraph(format!("duplicate edge ({i}, {j})")));
            }
            zero_based.push((i - 1, j - 1));
        }

        let mut neighbors = vec![Vec::new(); n];
        let mut positive = vec![Vec::new(); n];
        let mut negative = vec![Vec::new(); n];
        for (k, &(i, j)) in zero_based.iter().enumerate() {
            neighbors[i].push(j);
            neighbors[j].push(i);
            positive[i].push(k);
            negative[j].push(k);
        }

        if zero_based.len() + 1 != n {
            return Err(Error::AssumptionViolated(format!(
                "a tree on {n} vertices has {} edges, got {}",
                n - 1,
                zero_based.len()
            )));
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0];
        visited[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &neighbors[v] {
                if !visited[u] {
                    visited[u] = true;
                    stack.push(u);
                }
            }
        }
        if let Some(missing) = visited.iter().position(|v| !v) {
            return Err(Error::AssumptionViolated(format!(
                "vertex {} is not reachable from vertex 1",
                missing + 1
            )));
        }

        Ok(Topology {
            n,
            edges: zero_based,
            neighbors,
            positive,
            negative,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// `(positive end, negative end)` of edge `k`, 0-indexed.
    pub fn edge(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    /// All edges, 0-indexed.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// All edges, 1-indexed as in configuration files.
    pub fn edges_one_based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Edges for which agent `i` is the positive end.
    pub fn positive_edges(&self, i: usize) -> &[usize] {
        &self.positive[i]
    }

    /// Edges for which agent `i` is the negative end.
    pub fn negative_edges(&self, i: usize) -> &[usize] {
        &self.negative[i]
    }
}

pub fn build_topology(n: usize, edges: &[(usize, usize)]) -> Result<Topology> {
    Topology::new(n, edges)
}

/// Classical `N x M` incidence matrix.
pub fn incidence_b(t: &Topology) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(t.n_agents(), t.n_edges());
    for (k, &(i, j)) in t.edges().iter().enumerate() {
        b[(i, k)] = 1.0;
        b[(j, k)] = -1.0;
    }
    b
}

/// Pose-dependent `6N x 6M` incidence matrix with blocks `I_6` at the
/// positive end and `-Ad_{Xbar_k}^{-T}` at the negative end.
pub fn incidence_bbar(t: &Topology, rel_poses: &[Pose]) -> DMatrix<f64> {
    assert_eq!(rel_poses.len(), t.n_edges(), "one relative pose per edge");
    let mut m = DMatrix::zeros(6 * t.n_agents(), 6 * t.n_edges());
    for (k, &(i, j)) in t.edges().iter().enumerate() {
        m.view_mut((6 * i, 6 * k), (6, 6))
            .copy_from(&Matrix6::<f64>::identity());
        m.view_mut((6 * j, 6 * k), (6, 6))
            .copy_from(&(-adjoint_inv_transpose(&rel_poses[k])));
    }
    m
}

/// `X_j^{-1} X_i`.
pub fn relative_pose(x_i: &Pose, x_j: &Pose) -> Pose {
    x_j.inverse().compose(x_i)
}

/// `xi_i - Ad_{Xbar_k}^{-1} xi_j`.
pub fn relative_twist(xi_i: &Twist, xi_j: &Twist, xbar: &Pose) -> Twist {
    let transported = adjoint(&xbar.inverse()) * xi_j.to_vector();
    Twist::from_vector(&(xi_i.to_vector() - transported))
}

/// Singular-value summary of a matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl RankReport {
    pub fn ratio(&self) -> f64 {
        if self.sigma_max == 0.0 {
            0.0
        } else {
            self.sigma_min / self.sigma_max
        }
    }
}

/// Counts singular values above `rel_tol * sigma_max`. `sigma_min` is the
/// smallest of the `min(rows, cols)` singular values.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> RankReport {
    let sv = m.singular_values();
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let rank = sv.iter().filter(|&&s| s > rel_tol * sigma_max).count();
    RankReport {
        rank,
        sigma_min,
        sigma_max,
    }
}
