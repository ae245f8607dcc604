pub mod bayes_linear;
pub mod cli;
pub mod calibration;
pub mod emulator;
pub mod engine;
pub mod error;
pub mod exchangeability;
pub mod judgement;
pub mod linalg;
pub mod rng;
pub mod testbed;

pub use error::{PbaError, Result};
