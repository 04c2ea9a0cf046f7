//! Non-learned reconstruction baselines.

mod fdk;
pub mod fft;
mod sart;

pub use fdk::{fdk_reconstruct, FdkConfig, RampFilter};
pub use sart::{projection_residual, sart_reconstruct, SartConfig, SartInit};
