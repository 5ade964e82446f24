use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("degenerate density: total mass is {mass}")]
    DegenerateDensity { mass: f64 },

    #[error("empty particle ensemble")]
    EmptyEnsemble,

    #[error(
        "CFL violation: dt = {dt} exceeds the stable bound {bound} (limiting cell ix = {ix}, iv = {iv})"
    )]
    Cfl { dt: f64, bound: f64, ix: usize, iv: usize },

    #[error("non-finite state for particle {index} at t = {t}")]
    NonFinite { index: usize, t: f64 },

    #[error("scheme produced f = {value} at cell ({ix}, {iv}), below -1e-14 * max(f)")]
    NegativeDensity { value: f64, ix: usize, iv: usize },

    #[error("boundary mass fraction {fraction:e} exceeds tolerance {tol:e} at t = {t}; enlarge the domain")]
    BoundaryMass { fraction: f64, tol: f64, t: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("factorization failed: zero pivot at row {row}")]
    Factorization { row: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
