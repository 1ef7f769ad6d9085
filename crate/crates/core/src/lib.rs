pub mod augment;
pub mod data;
pub mod error;
pub mod model;
pub mod prob;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod ssl;
pub mod trainer;
pub mod harness;
