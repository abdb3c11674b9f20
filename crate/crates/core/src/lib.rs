pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod hyper;
pub mod layers;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
