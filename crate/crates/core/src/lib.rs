pub mod diffusion;
pub mod error;
pub mod estimator;
pub mod io;
pub mod mdl;
pub mod seasonal;
pub mod stream;
pub mod synthetic;
pub mod tensor;
pub mod trend;

pub use error::{Error, Result};
