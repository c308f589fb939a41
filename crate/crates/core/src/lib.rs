//! Point-cloud self-supervised pre-training by mixing and disentangling.
//!
//! Two clouds are mixed into one, encoded by a dynamic-graph encoder, and
//! each source is reconstructed from the shared embedding and a partial
//! view of it. The pre-trained encoder is then fine-tuned for
//! classification or part segmentation.

pub mod cli;
pub mod dataio;
pub mod diff;
pub mod error;
pub mod geom;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
