pub mod data_io;
pub mod error;
pub mod gradsuite;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
