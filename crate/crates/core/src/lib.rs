//! Category-wise fusion of semantic-segmentation probability maps with
//! dense-CRF refinement.
//!
//! The pipeline: pick expert networks from an IoU prior matrix
//! ([`selection`]), fuse their per-pixel confidence maps with
//! category-specific exponential weights ([`fusion`]), refine the fused map
//! with fully-connected CRF mean-field inference ([`crf`]), and score the
//! result ([`metrics`]). The [`tuner`] searches the CRF parameter space
//! against validation mIoU, and [`synth`] generates seeded benchmarks for
//! end-to-end verification.

pub mod crf;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod palette;
pub mod selection;
pub mod synth;
pub mod tensor;
pub mod tuner;

pub use error::{Error, Result};
