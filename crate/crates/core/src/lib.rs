//! Tree-enhanced multimodal attention for multi-label clinical coding.

pub mod autodiff;
pub mod error;
pub mod forest;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod tabular;

pub use error::{Error, Result};
