//! Frequency-masked multimodal autoencoder (FM-AE) for electrode contact
//! anomaly detection from paired cell-voltage sequences and infrared images.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod selfcheck;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
