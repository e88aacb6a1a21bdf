pub mod actions;
pub mod checks;
pub mod container;
pub mod dataset;
pub mod encoders;
pub mod harness;
pub mod error;
pub mod groups;
pub mod nn;
pub mod policy;
pub mod se3;
pub mod sim;

pub use error::{Error, Result};
