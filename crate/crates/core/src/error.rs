use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("user index {index} out of range for {users} users")]
    UserIndex { index: usize, users: usize },

    #[error("no transmit energy toward θ = {theta} rad (‖aᴴW‖² = {energy:e}); CRB undefined")]
    SignalNull { theta: f64, energy: f64 },

    #[error("quadrature order {0} outside 1..=50")]
    QuadratureOrder(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("conic solver numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("beamforming problem infeasible: {0}")]
    Infeasible(String),

    #[error("rank-one penalty loop stalled after {iterations} rounds (worst λ_max/Tr = {worst_ratio:.6})")]
    RankOneFailure { iterations: usize, worst_ratio: f64 },

    #[error("beamformer validation failed: {0}")]
    ValidationFailure(String),

    #[error("feasibility projection stalled with violation {violation:e}")]
    ProjectionFailure { violation: f64 },

    #[error("convexified SINR constraint of user {user} cannot be satisfied")]
    ConstraintInfeasible { user: usize },

    #[error("signal/noise subspaces not separable (eigenvalue gap {gap:e})")]
    DegenerateSubspace { gap: f64 },

    #[error("brute-force search limited to {limit} elements, got {got}")]
    SizeGuard { limit: usize, got: usize },
}
