//! Knee MRI bone and cartilage segmentation: data handling, the MRFF/CBAM
//! encoder-decoder network, training losses, critical-slice selection,
//! evaluation metrics and the experiment harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod roi;

pub use error::{Error, Result};
