//! Fused image/tabular transformer propensity model and its cross-fitted
//! training loop.
//!
//! Each sample becomes a token sequence `[CLS, patch₁ … patchₚ, tabular]`:
//! image patches and the covariate vector are linearly projected to the
//! embedding width, learned positional embeddings are added, and a pre-norm
//! encoder stack processes the sequence. The classifier head reads the CLS
//! position and emits one logit.

mod model;
mod train;

pub use model::{Activation, Batch, Mode, ModelConfig, Pooling, PropensityModel};
pub use train::{
    input_gradients, patchify, train_propensity, BalancedSampler, CrossFit, FoldAssignment, FoldModel, ImageNormalizer,
    PropensityData, TrainConfig,
};

use crate::error::Result;

/// Mean over the batch rows of ∂p/∂x for each tabular input.
pub fn salience_gradients(model: &PropensityModel, batch: &Batch) -> Result<Vec<f64>> {
    let width = model.config.tabular_width;
    let g = input_gradients(model, batch, 0.0)?;
    let mut out = vec![0.0; width];
    for r in 0..batch.size {
        for j in 0..width {
            out[j] += g[r * width + j] as f64;
        }
    }
    Ok(out.into_iter().map(|v| v / batch.size.max(1) as f64).collect())
}
