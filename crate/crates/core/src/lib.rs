pub mod backtest;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod market;
pub mod mvn;
pub mod normal;
pub mod optimizer;
pub mod quadrature;
pub mod wealth;

pub use error::{Error, Result};
