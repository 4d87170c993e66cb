pub mod cli;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod eval;
pub mod model;
pub mod preprocess;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
