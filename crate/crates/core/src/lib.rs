pub mod error;
pub mod nn;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod interp;
pub mod scenarios;
pub mod metrics;
pub mod trainer;
pub mod diagnostics;
