//! Digital-twin-assisted antenna tilt control with a learned physical/twin data ratio.

pub mod error;
pub mod harness;
pub mod math;
pub mod network;
pub mod ppo;
pub mod ratio;
pub mod rng;
pub mod tilt;
pub mod twin;

pub use error::{Error, Result};
