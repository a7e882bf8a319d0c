//! Frequency-domain periodic-invariance regularization for time-series
//! representation learning.

pub mod checkpoint;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod floss;
pub mod optim;
pub mod periodicity;
pub mod spectral;
pub mod timeseries;
pub mod train;
pub mod views;

pub use error::{Error, Result};
