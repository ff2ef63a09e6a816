//! Heavy-tail spectral analysis of neural-network weight matrices and the
//! rank-correlation harness for relating metrics to model quality.

pub mod cli;
pub mod correlate;
pub mod error;
pub mod esd;
pub mod metrics;
pub mod netprobe;
pub mod numeric;
pub mod synth;
pub mod tailfit;
pub mod tensor_io;

pub use error::{Error, Result};
