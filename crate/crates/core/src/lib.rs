pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod operator;
pub mod nonlinearity;
pub mod potential;
pub mod solver;

pub use config::RunConfig;
pub use error::{Error, Result};
