pub mod env;
pub mod error;
pub mod harness;
pub mod imagination;
pub mod model;
pub mod qd;
pub mod runner;
pub mod selection;

pub use error::{Error, Result};
