pub mod autodiff;
pub mod burgers;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod parametrization;
pub mod tensor;

pub use error::{Error, Result};
