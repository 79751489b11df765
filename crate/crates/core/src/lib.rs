pub mod assembly;
pub mod cli;
pub mod coeff;
pub mod control;
pub mod error;
pub mod grid;
pub mod interp;
pub mod linalg;
pub mod multiscale;
pub mod pair;
pub mod saddle;

pub use error::{Error, Result};
