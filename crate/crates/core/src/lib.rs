//! Uncertainty mitigation for microgrids supplied by renewable generation.
//!
//! * [`alloc`]: minimum-variance allocation over several generation units.
//! * [`gbm`]: geometric Brownian motion generation model.
//! * [`reserve`]: battery reserve planning for a sustained energy demand.
//! * [`hedge`]: generation/battery replication policy guaranteeing a power
//!   demand at a future time.

pub mod alloc;
pub mod error;
pub mod gbm;
pub mod hedge;
pub mod normal;
pub mod reserve;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Error, Result};
