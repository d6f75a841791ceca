//! Pre-norm transformer encoder: forward pass with cached activations and the
//! matching reverse pass.
//!
//! Rows are packed: padding never enters the computation, each sequence
//! attends only over its own tokens. This is exactly a padded encoder whose
//! attention masks out `[PAD]` keys, restricted to the non-pad query rows.

use super::ops::{
    accumulate_bias_grad, add_bias, apply_mask_in_place, dropout_mask, gelu, gelu_grad,
    layer_norm, layer_norm_backward, NormCache,
};
use super::params::{LayerParams, ModelParameters, Tensor};
use crate::batching::PaddedBatch;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{gemm, Scalar};
use crate::text::TokenId;

/// Whether dropout is active. Training dropout masks are drawn from `seed`,
/// so a forward pass is a deterministic function of its inputs either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Last-layer hidden states of a batch, packed without padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden<F> {
    pub data: Vec<F>,
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
    pub hidden: usize,
}

impl<F: Scalar> Hidden<F> {
    pub fn sequences(&self) -> usize {
        self.lengths.len()
    }

    pub fn total_rows(&self) -> usize {
        self.data.len() / self.hidden
    }

    /// `length x hidden` block of one sequence.
    pub fn sequence(&self, s: usize) -> &[F] {
        let h = self.hidden;
        &self.data[self.offsets[s] * h..(self.offsets[s] + self.lengths[s]) * h]
    }

    pub fn row(&self, s: usize, pos: usize) -> &[F] {
        let h = self.hidden;
        let r = self.offsets[s] + pos;
        &self.data[r * h..(r + 1) * h]
    }

    /// `(sequences, max_len, hidden)` layout with zero rows at padding.
    pub fn to_padded(&self, max_len: usize) -> Vec<F> {
        let h = self.hidden;
        let mut out = vec![F::zero(); self.sequences() * max_len * h];
        for s in 0..self.sequences() {
            let src = self.sequence(s);
            out[s * max_len * h..s * max_len * h + src.len()].copy_from_slice(src);
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    attn_norm: NormCache<F>,
    attn_in: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    probs_drop: Option<Vec<F>>,
    context: Vec<F>,
    attn_drop: Option<Vec<F>>,
    ffn_norm: NormCache<F>,
    ffn_in: Vec<F>,
    pre_act: Vec<F>,
    act: Vec<F>,
    ffn_drop: Option<Vec<F>>,
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    ids: Vec<TokenId>,
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    /// Start of each sequence's `heads x len x len` block in `probs`.
    prob_offsets: Vec<usize>,
    embed_drop: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
}

/// `y = x W + b` for `rows` rows.
pub(crate) fn linear<F: Scalar>(x: &[F], rows: usize, w: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
    let mut y = vec![F::zero(); rows * fan_out];
    gemm(false, false, rows, fan_out, fan_in, F::one(), x, &w.data, F::zero(), &mut y);
    add_bias(&mut y, &b.data);
    y
}

/// Accumulates `dW += x^T dy`, `db += sum(dy)` and returns `dx = dy W^T`.
pub(crate) fn linear_backward<F: Scalar>(
    x: &[F],
    dy: &[F],
    rows: usize,
    w: &Tensor<F>,
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Vec<F> {
    let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
    gemm(true, false, fan_in, fan_out, rows, F::one(), x, dy, F::one(), &mut dw.data);
    accumulate_bias_grad(dy, &mut db.data);
    let mut dx = vec![F::zero(); rows * fan_in];
    gemm(false, true, rows, fan_in, fan_out, F::one(), dy, &w.data, F::zero(), &mut dx);
    dx
}

struct AttentionShape {
    hidden: usize,
    heads: usize,
    head_dim: usize,
}

fn attention_forward<F: Scalar>(
    qkv: &[F],
    offsets: &[usize],
    lengths: &[usize],
    prob_offsets: &[usize],
    shape: &AttentionShape,
    probs: &mut [F],
    probs_drop: &Option<Vec<F>>,
) -> Vec<F> {
    let AttentionShape {
        hidden: h,
        heads,
        head_dim: dh,
    } = *shape;
    let stride = 3 * h;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let total: usize = lengths.iter().sum();
    let mut context = vec![F::zero(); total * h];
    for (s, (&off, &len)) in offsets.iter().zip(lengths).enumerate() {
        for hd in 0..heads {
            let block = prob_offsets[s] + hd * len * len;
            let (qo, ko, vo) = (hd * dh, h + hd * dh, 2 * h + hd * dh);
            for i in 0..len {
                let q = &qkv[(off + i) * stride + qo..(off + i) * stride + qo + dh];
                let row = &mut probs[block + i * len..block + (i + 1) * len];
                let mut max = F::neg_infinity();
                for (j, p) in row.iter_mut().enumerate() {
                    let k = &qkv[(off + j) * stride + ko..(off + j) * stride + ko + dh];
                    let sc = q.iter().zip(k).fold(F::zero(), |a, (&x, &y)| a + x * y) * scale;
                    *p = sc;
                    if sc > max {
                        max = sc;
                    }
                }
                let mut sum = F::zero();
                for p in row.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                let inv = F::one() / sum;
                row.iter_mut().for_each(|p| *p *= inv);

                let ctx = &mut context[(off + i) * h + qo..(off + i) * h + qo + dh];
                for j in 0..len {
                    let mut pij = row[j];
                    if let Some(m) = probs_drop {
                        pij *= m[block + i * len + j];
                    }
                    if pij == F::zero() {
                        continue;
                    }
                    let v = &qkv[(off + j) * stride + vo..(off + j) * stride + vo + dh];
                    for (c, &vv) in ctx.iter_mut().zip(v) {
                        *c += pij * vv;
                    }
                }
            }
        }
    }
    context
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<F: Scalar>(
    dcontext: &[F],
    qkv: &[F],
    offsets: &[usize],
    lengths: &[usize],
    prob_offsets: &[usize],
    shape: &AttentionShape,
    probs: &[F],
    probs_drop: &Option<Vec<F>>,
) -> Vec<F> {
    let AttentionShape {
        hidden: h,
        heads,
        head_dim: dh,
    } = *shape;
    let stride = 3 * h;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut dqkv = vec![F::zero(); qkv.len()];
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut dp = vec![F::zero(); max_len];
    for (s, (&off, &len)) in offsets.iter().zip(lengths).enumerate() {
        for hd in 0..heads {
            let block = prob_offsets[s] + hd * len * len;
            let (qo, ko, vo) = (hd * dh, h + hd * dh, 2 * h + hd * dh);
            for i in 0..len {
                let dctx = &dcontext[(off + i) * h + qo..(off + i) * h + qo + dh];
                let p = &probs[block + i * len..block + (i + 1) * len];
                // Gradient w.r.t. the (dropped-out) probabilities and values.
                for j in 0..len {
                    let keep = probs_drop.as_ref().map_or(F::one(), |m| m[block + i * len + j]);
                    let vrow = (off + j) * stride + vo;
                    let mut acc = F::zero();
                    for d in 0..dh {
                        acc += dctx[d] * qkv[vrow + d];
                    }
                    dp[j] = acc * keep;
                    let pd = p[j] * keep;
                    if pd != F::zero() {
                        for d in 0..dh {
                            dqkv[vrow + d] += pd * dctx[d];
                        }
                    }
                }
                // Softmax backward.
                let dot: F = (0..len).fold(F::zero(), |a, j| a + p[j] * dp[j]);
                let qrow = (off + i) * stride + qo;
                for j in 0..len {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    let krow = (off + j) * stride + ko;
                    for d in 0..dh {
                        dqkv[qrow + d] += ds * qkv[krow + d];
                        dqkv[krow + d] += ds * qkv[qrow + d];
                    }
                }
            }
        }
    }
    dqkv
}

impl<F: Scalar> ModelParameters<F> {
    fn attention_shape(&self) -> AttentionShape {
        AttentionShape {
            hidden: self.config.hidden,
            heads: self.config.heads,
            head_dim: self.config.head_dim(),
        }
    }

    /// Runs the encoder over every row of `batch`.
    pub fn encode(&self, batch: &PaddedBatch, mode: Mode) -> Result<(Hidden<F>, EncoderCache<F>)> {
        let cfg = &self.config;
        let h = cfg.hidden;
        let mut ids = Vec::new();
        let mut offsets = Vec::with_capacity(batch.rows());
        let lengths = batch.lengths().to_vec();
        for r in 0..batch.rows() {
            let toks = batch.tokens(r);
            if toks.len() > cfg.max_positions {
                return Err(Error::OverLength {
                    len: toks.len(),
                    max: cfg.max_positions,
                });
            }
            if let Some(&bad) = toks.iter().find(|&&t| t as usize >= cfg.vocab_size) {
                return Err(Error::InvalidArgument(format!(
                    "token id {bad} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
            offsets.push(ids.len());
            ids.extend_from_slice(toks);
        }
        let total = ids.len();
        let mut prob_offsets = Vec::with_capacity(lengths.len());
        let mut prob_total = 0;
        for &len in &lengths {
            prob_offsets.push(prob_total);
            prob_total += cfg.heads * len * len;
        }

        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(CounterRng::new(seed)),
        };
        let rate = cfg.dropout;

        let mut x = vec![F::zero(); total * h];
        for (&off, &len) in offsets.iter().zip(&lengths) {
            for p in 0..len {
                let id = ids[off + p] as usize;
                let row = &mut x[(off + p) * h..(off + p + 1) * h];
                let tok = &self.token_embedding.data[id * h..(id + 1) * h];
                let pos = &self.position_embedding.data[p * h..(p + 1) * h];
                for c in 0..h {
                    row[c] = tok[c] + pos[c];
                }
            }
        }
        let embed_drop = dropout_mask(x.len(), rate, rng.as_mut());
        apply_mask_in_place(&mut x, &embed_drop);

        let shape = self.attention_shape();
        let mut layers = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let (attn_in, attn_norm) =
                layer_norm(&x, &lp.attn_norm_gamma.data, &lp.attn_norm_beta.data, cfg.layer_norm_eps);
            let qkv = linear(&attn_in, total, &lp.qkv_weight, &lp.qkv_bias);
            let mut probs = vec![F::zero(); prob_total];
            let probs_drop = dropout_mask(prob_total, rate, rng.as_mut());
            let context = attention_forward(
                &qkv,
                &offsets,
                &lengths,
                &prob_offsets,
                &shape,
                &mut probs,
                &probs_drop,
            );
            let mut attn_out = linear(&context, total, &lp.out_weight, &lp.out_bias);
            let attn_drop = dropout_mask(attn_out.len(), rate, rng.as_mut());
            apply_mask_in_place(&mut attn_out, &attn_drop);
            for (xv, &a) in x.iter_mut().zip(&attn_out) {
                *xv += a;
            }

            let (ffn_in, ffn_norm) =
                layer_norm(&x, &lp.ffn_norm_gamma.data, &lp.ffn_norm_beta.data, cfg.layer_norm_eps);
            let pre_act = linear(&ffn_in, total, &lp.ffn_in_weight, &lp.ffn_in_bias);
            let act: Vec<F> = pre_act.iter().map(|&v| gelu(v)).collect();
            let mut ffn_out = linear(&act, total, &lp.ffn_out_weight, &lp.ffn_out_bias);
            let ffn_drop = dropout_mask(ffn_out.len(), rate, rng.as_mut());
            apply_mask_in_place(&mut ffn_out, &ffn_drop);
            for (xv, &f) in x.iter_mut().zip(&ffn_out) {
                *xv += f;
            }

            layers.push(LayerCache {
                attn_norm,
                attn_in,
                qkv,
                probs,
                probs_drop,
                context,
                attn_drop,
                ffn_norm,
                ffn_in,
                pre_act,
                act,
                ffn_drop,
            });
        }
        let (out, final_norm) = layer_norm(
            &x,
            &self.final_norm_gamma.data,
            &self.final_norm_beta.data,
            cfg.layer_norm_eps,
        );
        let hidden = Hidden {
            data: out,
            offsets: offsets.clone(),
            lengths: lengths.clone(),
            hidden: h,
        };
        let cache = EncoderCache {
            ids,
            offsets,
            lengths,
            prob_offsets,
            embed_drop,
            layers,
            final_norm,
        };
        Ok((hidden, cache))
    }

    /// Back-propagates `d_hidden` (packed like [`Hidden::data`]) through the
    /// encoder, accumulating into `grads`.
    pub fn encode_backward(&self, cache: &EncoderCache<F>, d_hidden: &[F], grads: &mut ModelParameters<F>) {
        let h = self.config.hidden;
        let total = cache.ids.len();
        assert_eq!(d_hidden.len(), total * h, "d_hidden has wrong size");
        let shape = self.attention_shape();

        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.final_norm,
            &self.final_norm_gamma.data,
            &mut grads.final_norm_gamma.data,
            &mut grads.final_norm_beta.data,
        );

        for ((lp, lc), lg) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            layer_backward(lp, lc, lg, &mut dx, cache, total, &shape);
        }

        apply_mask_in_place(&mut dx, &cache.embed_drop);
        for (&off, &len) in cache.offsets.iter().zip(&cache.lengths) {
            for p in 0..len {
                let id = cache.ids[off + p] as usize;
                let g = &dx[(off + p) * h..(off + p + 1) * h];
                for (t, &v) in grads.token_embedding.data[id * h..(id + 1) * h].iter_mut().zip(g) {
                    *t += v;
                }
                for (t, &v) in grads.position_embedding.data[p * h..(p + 1) * h].iter_mut().zip(g) {
                    *t += v;
                }
            }
        }
    }
}

fn layer_backward<F: Scalar>(
    lp: &LayerParams<F>,
    lc: &LayerCache<F>,
    lg: &mut LayerParams<F>,
    dx: &mut [F],
    cache: &EncoderCache<F>,
    total: usize,
    shape: &AttentionShape,
) {
    // Feed-forward sublayer: x_out = x_mid + drop(W2 gelu(W1 ln(x_mid))).
    let mut dffn = dx.to_vec();
    apply_mask_in_place(&mut dffn, &lc.ffn_drop);
    let dact = linear_backward(
        &lc.act,
        &dffn,
        total,
        &lp.ffn_out_weight,
        &mut lg.ffn_out_weight,
        &mut lg.ffn_out_bias,
    );
    let dpre: Vec<F> = dact
        .iter()
        .zip(&lc.pre_act)
        .map(|(&d, &u)| d * gelu_grad(u))
        .collect();
    let dffn_in = linear_backward(
        &lc.ffn_in,
        &dpre,
        total,
        &lp.ffn_in_weight,
        &mut lg.ffn_in_weight,
        &mut lg.ffn_in_bias,
    );
    let dres = layer_norm_backward(
        &dffn_in,
        &lc.ffn_norm,
        &lp.ffn_norm_gamma.data,
        &mut lg.ffn_norm_gamma.data,
        &mut lg.ffn_norm_beta.data,
    );
    for (d, r) in dx.iter_mut().zip(dres) {
        *d += r;
    }

    // Attention sublayer: x_mid = x_in + drop(Wo attn(ln(x_in))).
    let mut dattn = dx.to_vec();
    apply_mask_in_place(&mut dattn, &lc.attn_drop);
    let dcontext = linear_backward(
        &lc.context,
        &dattn,
        total,
        &lp.out_weight,
        &mut lg.out_weight,
        &mut lg.out_bias,
    );
    let dqkv = attention_backward(
        &dcontext,
        &lc.qkv,
        &cache.offsets,
        &cache.lengths,
        &cache.prob_offsets,
        shape,
        &lc.probs,
        &lc.probs_drop,
    );
    let dattn_in = linear_backward(
        &lc.attn_in,
        &dqkv,
        total,
        &lp.qkv_weight,
        &mut lg.qkv_weight,
        &mut lg.qkv_bias,
    );
    let dres = layer_norm_backward(
        &dattn_in,
        &lc.attn_norm,
        &lp.attn_norm_gamma.data,
        &mut lg.attn_norm_gamma.data,
        &mut lg.attn_norm_beta.data,
    );
    for (d, r) in dx.iter_mut().zip(dres) {
        *d += r;
    }
}
