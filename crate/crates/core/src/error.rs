use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not a twist (wedge pattern violated, residual {residual:.3e})")]
    MalformedTangent { residual: f64 },

    #[error("matrix is not a rotation (orthogonality residual {residual:.3e}, det {det})")]
    NotRotation { residual: f64, det: f64 },

    #[error("rotation axis must be a unit vector (norm {norm})")]
    InvalidAxis { norm: f64 },

    #[error("weighting scale d must be positive, got {0}")]
    InvalidScale(f64),

    #[error("W = A - b b^T / d is not positive semi-definite (smallest eigenvalue {min_eig:.6e})")]
    NotPsd { min_eig: f64 },

    #[error("Wbar = (tr(W) I - W) / 2 is not positive definite (smallest eigenvalue {min_eig:.6e})")]
    DegenerateWeight { min_eig: f64 },

    #[error("no synergy gap: Delta_W* = {delta_star:.6e}")]
    NoSynergyGap { delta_star: f64 },

    #[error("invalid synergy parameters: {0}")]
    InvalidSynergy(String),

    #[error("graph must be connected and acyclic: {0}")]
    AssumptionViolated(String),

    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    #[error("invalid inertia: {0}")]
    InvalidInertia(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no edge is in the jump set")]
    NotInJumpSet,

    #[error("certificate violated at t = {t}, j = {j}: {detail}")]
    CertificateViolation { t: f64, j: usize, detail: String },

    #[error("non-finite state at t = {t}, j = {j}")]
    NumericalDivergence { t: f64, j: usize },

    #[error("oracle failure: {0}")]
    OracleFailure(String),
}
