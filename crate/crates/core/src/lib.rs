pub mod bench;
pub mod error;
pub mod ifl;
pub mod io;
pub mod operator;
pub mod panel;
pub mod portfolio;
pub mod simulate;
pub mod solver;

pub use error::{IflError, Result};
pub use panel::{CoefficientMatrix, RegressionPanel};
