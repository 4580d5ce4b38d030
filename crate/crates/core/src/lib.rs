pub mod error;
pub mod estimation;
pub mod fpk;
pub mod model;
pub mod scenarios;
pub mod simulator;
pub mod state_space;

pub use error::{Error, Result};
