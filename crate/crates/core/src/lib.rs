//! Kolmogorov-Arnold convolutional networks with polynomial bases.

pub mod attention;
pub mod basis;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod models;
pub mod peft;
pub mod regularization;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
