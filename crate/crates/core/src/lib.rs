//! Progressive mixture-of-experts control for two-character planar interactions.

pub mod error;
pub mod nn;
pub mod physics;

pub use error::{Error, Result};
pub mod motion;
pub mod env;
pub mod policy;
pub mod eval;
pub mod parallel;
pub mod trainer;
pub mod checkpoint;
