pub mod autodiff;
pub mod epochs;
pub mod error;
pub mod harness;
pub mod net;
pub mod preprocess;
pub mod registry;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
