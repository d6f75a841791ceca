//! Sentence pooling, the projection head and the masked-LM decoder.

use serde::{Deserialize, Serialize};

use super::model::{linear, linear_backward, Hidden};
use super::ops::{gelu, gelu_grad};
use super::params::ModelParameters;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Row 0, the `[CLS]` position.
    Cls,
    /// Average over all non-padding rows.
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::InvalidArgument(format!("unknown pooling {s:?}"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Cls => "cls",
            Pooling::Mean => "mean",
        })
    }
}

/// One `hidden`-wide vector per sequence, row-major.
pub fn pool<F: Scalar>(hidden: &Hidden<F>, strategy: Pooling) -> Vec<F> {
    let h = hidden.hidden;
    let mut out = vec![F::zero(); hidden.sequences() * h];
    for s in 0..hidden.sequences() {
        let dst = &mut out[s * h..(s + 1) * h];
        match strategy {
            Pooling::Cls => dst.copy_from_slice(hidden.row(s, 0)),
            Pooling::Mean => {
                let len = hidden.lengths[s];
                for row in hidden.sequence(s).chunks_exact(h) {
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let inv = F::lit(1.0 / len as f64);
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        }
    }
    out
}

/// Scatters the gradient of pooled vectors back to packed hidden rows.
pub fn pool_backward<F: Scalar>(hidden: &Hidden<F>, strategy: Pooling, d_pooled: &[F]) -> Vec<F> {
    let h = hidden.hidden;
    let mut dh = vec![F::zero(); hidden.data.len()];
    for s in 0..hidden.sequences() {
        let g = &d_pooled[s * h..(s + 1) * h];
        let off = hidden.offsets[s];
        match strategy {
            Pooling::Cls => dh[off * h..(off + 1) * h].copy_from_slice(g),
            Pooling::Mean => {
                let len = hidden.lengths[s];
                let inv = F::lit(1.0 / len as f64);
                for p in 0..len {
                    for (d, &v) in dh[(off + p) * h..(off + p + 1) * h].iter_mut().zip(g) {
                        *d = v * inv;
                    }
                }
            }
        }
    }
    dh
}

#[derive(Debug, Clone)]
pub struct ProjectionCache<F> {
    input: Vec<F>,
    pre_act: Vec<F>,
    act: Vec<F>,
    rows: usize,
    activation: HeadActivation,
}

/// Activation between the two affine maps of the projection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadActivation {
    #[default]
    Gelu,
    /// Makes the head affine; only meaningful in tests.
    Identity,
}

impl<F: Scalar> ModelParameters<F> {
    /// `z = W2 act(W1 x + b1) + b2` for each pooled row.
    pub fn project(&self, pooled: &[F]) -> (Vec<F>, ProjectionCache<F>) {
        self.project_with(pooled, HeadActivation::Gelu)
    }

    pub fn project_with(&self, pooled: &[F], activation: HeadActivation) -> (Vec<F>, ProjectionCache<F>) {
        let rows = pooled.len() / self.config.hidden;
        let pre_act = linear(pooled, rows, &self.proj_in_weight, &self.proj_in_bias);
        let act: Vec<F> = match activation {
            HeadActivation::Gelu => pre_act.iter().map(|&v| gelu(v)).collect(),
            HeadActivation::Identity => pre_act.clone(),
        };
        let z = linear(&act, rows, &self.proj_out_weight, &self.proj_out_bias);
        (
            z,
            ProjectionCache {
                input: pooled.to_vec(),
                pre_act,
                act,
                rows,
                activation,
            },
        )
    }

    pub fn project_backward(
        &self,
        cache: &ProjectionCache<F>,
        dz: &[F],
        grads: &mut ModelParameters<F>,
    ) -> Vec<F> {
        let dact = linear_backward(
            &cache.act,
            dz,
            cache.rows,
            &self.proj_out_weight,
            &mut grads.proj_out_weight,
            &mut grads.proj_out_bias,
        );
        let dpre: Vec<F> = match cache.activation {
            HeadActivation::Gelu => dact
                .iter()
                .zip(&cache.pre_act)
                .map(|(&d, &u)| d * gelu_grad(u))
                .collect(),
            HeadActivation::Identity => dact,
        };
        linear_backward(
            &cache.input,
            &dpre,
            cache.rows,
            &self.proj_in_weight,
            &mut grads.proj_in_weight,
            &mut grads.proj_in_bias,
        )
    }

    /// Vocabulary logits at the given `(sequence, position)` rows, decoded
    /// with the tied token-embedding matrix. Returns the logits and the
    /// gathered hidden rows.
    pub fn mlm_logits(&self, hidden: &Hidden<F>, positions: &[(usize, usize)]) -> (Vec<F>, Vec<F>) {
        let h = self.config.hidden;
        let v = self.config.vocab_size;
        let mut gathered = Vec::with_capacity(positions.len() * h);
        for &(s, p) in positions {
            gathered.extend_from_slice(hidden.row(s, p));
        }
        let m = positions.len();
        let mut logits = vec![F::zero(); m * v];
        gemm(false, true, m, v, h, F::one(), &gathered, &self.token_embedding.data, F::zero(), &mut logits);
        for row in logits.chunks_exact_mut(v) {
            for (l, &b) in row.iter_mut().zip(&self.mlm_bias.data) {
                *l += b;
            }
        }
        (logits, gathered)
    }

    /// Back-propagates logit gradients; returns the packed hidden gradient.
    pub fn mlm_backward(
        &self,
        hidden: &Hidden<F>,
        positions: &[(usize, usize)],
        gathered: &[F],
        dlogits: &[F],
        grads: &mut ModelParameters<F>,
    ) -> Vec<F> {
        let h = self.config.hidden;
        let v = self.config.vocab_size;
        let m = positions.len();
        gemm(true, false, v, h, m, F::one(), dlogits, gathered, F::one(), &mut grads.token_embedding.data);
        for row in dlogits.chunks_exact(v) {
            for (g, &d) in grads.mlm_bias.data.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dgathered = vec![F::zero(); m * h];
        gemm(false, false, m, h, v, F::one(), dlogits, &self.token_embedding.data, F::zero(), &mut dgathered);
        let mut dh = vec![F::zero(); hidden.data.len()];
        for (i, &(s, p)) in positions.iter().enumerate() {
            let r = hidden.offsets[s] + p;
            for (d, &g) in dh[r * h..(r + 1) * h].iter_mut().zip(&dgathered[i * h..(i + 1) * h]) {
                *d += g;
            }
        }
        dh
    }
}
