//! Quantization-aware CNN for 64×64 RGB classification, its conversion to a
//! rate-coded integer spiking network, and an event-driven simulator for the
//! converted network.

pub mod arch;
pub mod codec;
pub mod convert;
pub mod data;
pub mod error;
pub mod ops;
pub mod snn;
pub mod tensor;
pub mod train;

pub use error::{QanaError, Result};
pub use tensor::{Real, Tensor};
