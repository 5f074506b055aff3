pub mod agent;
pub mod alignment;
pub mod autodiff;
pub mod cli;
pub mod envs;
pub mod enhancement;
pub mod error;
pub mod extractors;

pub use error::{Error, Result};
