//! Transformer encoder, pooling and projection head with exact reverse-mode
//! gradients.
//!
//! The encoder is pre-norm: each block computes
//! `x += drop(attn(ln(x)))` then `x += drop(ffn(ln(x)))`, and a final layer
//! norm produces the hidden states. Every forward method has a matching
//! `*_backward` that accumulates into a [`ModelParameters`] of gradients with
//! the same shapes as the weights.

mod config;
mod heads;
mod model;
mod ops;
mod params;

pub use config::EncoderConfig;
pub use heads::{pool, pool_backward, HeadActivation, Pooling, ProjectionCache};
pub use model::{EncoderCache, Hidden, Mode};
pub use ops::{gelu, gelu_grad};
pub use params::{LayerParams, ModelParameters, Tensor};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Evaluates a loss together with its gradient.
///
/// `loss` receives the parameters and a zeroed gradient buffer; it returns
/// the scalar loss after accumulating `d loss / d params` into the buffer.
/// A non-finite loss is rejected.
pub fn gradient<F, L>(params: &ModelParameters<F>, loss: L) -> Result<(F, ModelParameters<F>)>
where
    F: Scalar,
    L: FnOnce(&ModelParameters<F>, &mut ModelParameters<F>) -> Result<F>,
{
    let mut grads = params.zeros_like();
    let value = loss(params, &mut grads)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { batch: None });
    }
    Ok((value, grads))
}
