use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain mask has an empty interior")]
    EmptyInterior,

    #[error("domain mask interior is not lattice-connected ({components} components)")]
    Disconnected { components: usize },

    #[error("cannot build a nested exhaustion: {0}")]
    CannotNest(String),

    #[error("fields or operators are defined on different masks")]
    MaskMismatch,

    #[error("ellipticity violated at grid point {index} (x = {coords:?}): minimum eigenvalue {min_eigenvalue:e}")]
    Ellipticity {
        index: usize,
        coords: Vec<f64>,
        min_eigenvalue: f64,
    },

    #[error("discretization is not an M-matrix: {0}")]
    MMatrix(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("grid point {0} is not an interior point")]
    NotInterior(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error("no convergence after {iterations} iterations (increment {increment:e}, residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        increment: f64,
        residual: f64,
    },

    #[error("iterate went negative ({value:e} at grid point {index}); monotone scheme broke down")]
    NegativeIterate { index: usize, value: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
