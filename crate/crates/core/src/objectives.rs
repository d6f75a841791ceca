//! NT-Xent contrastive loss, masked-LM cross-entropy and their combination.
//!
//! For a positive pair `(i, j)` among `2N` projected views,
//!
//! ```text
//! l(i, j) = -log( exp(sim(z_i, z_j) / t) / sum_{k != i} exp(sim(z_i, z_k) / t) )
//! ```
//!
//! and the batch loss sums `l(i, partner(i))` over every view, so each pair
//! is counted once per direction. That is twice the mean-reduced SimCLR
//! convention times N; no averaging is applied.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    MlmOnly,
    ClOnly,
    MlmPlusCl,
}

impl LossMode {
    pub fn uses_mlm(self) -> bool {
        matches!(self, LossMode::MlmOnly | LossMode::MlmPlusCl)
    }

    pub fn uses_cl(self) -> bool {
        matches!(self, LossMode::ClOnly | LossMode::MlmPlusCl)
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm_only" | "mlm" => Ok(LossMode::MlmOnly),
            "cl_only" | "cl" => Ok(LossMode::ClOnly),
            "mlm_plus_cl" | "mlm+cl" => Ok(LossMode::MlmPlusCl),
            _ => Err(Error::InvalidArgument(format!("unknown loss mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            mode: LossMode::MlmPlusCl,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub fn cosine_sim<F: Scalar>(u: &[F], v: &[F]) -> Result<F> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == F::zero() || nv == F::zero() {
        return Err(Error::ZeroNorm);
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-F::one()).min(F::one()))
}

/// Positive-partner map over `2N` views. Every view has exactly one partner,
/// distinct from itself, and the relation is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    partner: Vec<usize>,
}

impl Pairing {
    pub fn new(partner: Vec<usize>) -> Result<Self> {
        let n = partner.len();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::MalformedPairing(format!("{n} views")));
        }
        for (i, &p) in partner.iter().enumerate() {
            if p >= n || p == i || partner[p] != i {
                return Err(Error::MalformedPairing(format!("view {i} -> {p}")));
            }
        }
        Ok(Self { partner })
    }

    /// Views `2k` and `2k+1` paired, for `n` sentences.
    pub fn interleaved(n: usize) -> Self {
        Self {
            partner: (0..2 * n).map(|i| i ^ 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }

    /// m(i, j).
    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.partner.get(i) == Some(&j)
    }
}

/// Unit-normalised rows and their original norms.
fn normalize_rows<F: Scalar>(z: &[F], dim: usize) -> Result<(Vec<F>, Vec<F>)> {
    let mut unit = z.to_vec();
    let mut norms = Vec::with_capacity(z.len() / dim);
    for row in unit.chunks_exact_mut(dim) {
        let n = norm(row);
        if n == F::zero() || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

fn check_views<F>(z: &[F], dim: usize) -> Result<usize> {
    if dim == 0 || !z.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not split into rows of {dim}",
            z.len()
        )));
    }
    Ok(z.len() / dim)
}

/// Scaled similarity row `sim(z_i, z_k) / t` for all `k`, with `k == i` left
/// as negative infinity, plus its maximum over `k != i`.
fn logit_row<F: Scalar>(unit: &[F], dim: usize, i: usize, inv_t: F, out: &mut [F]) -> F {
    let zi = &unit[i * dim..(i + 1) * dim];
    let mut max = F::neg_infinity();
    for (k, o) in out.iter_mut().enumerate() {
        if k == i {
            *o = F::neg_infinity();
            continue;
        }
        let s = dot(zi, &unit[k * dim..(k + 1) * dim]) * inv_t;
        *o = s;
        if s > max {
            max = s;
        }
    }
    max
}

/// `l(i, j)` over views `z` (row-major, `dim` columns).
pub fn nt_xent_pair<F: Scalar>(i: usize, j: usize, z: &[F], dim: usize, temperature: F) -> Result<F> {
    let n = check_views(z, dim)?;
    if i >= n || j >= n || i == j {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) invalid for {n} views")));
    }
    if temperature <= F::zero() {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let (unit, _) = normalize_rows(z, dim)?;
    let mut row = vec![F::zero(); n];
    let max = logit_row(&unit, dim, i, F::one() / temperature, &mut row);
    let sum: F = row.iter().filter(|v| v.is_finite()).map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    Ok((lse - row[j]).max(F::zero()))
}

/// Batch loss `sum_i l(i, partner(i))`.
pub fn contrastive_loss<F: Scalar>(z: &[F], dim: usize, pairing: &Pairing, temperature: F) -> Result<F> {
    contrastive_loss_impl(z, dim, pairing, temperature, false).map(|(l, _)| l)
}

/// Batch loss and its gradient with respect to `z`.
pub fn contrastive_loss_with_grad<F: Scalar>(
    z: &[F],
    dim: usize,
    pairing: &Pairing,
    temperature: F,
) -> Result<(F, Vec<F>)> {
    contrastive_loss_impl(z, dim, pairing, temperature, true)
}

fn contrastive_loss_impl<F: Scalar>(
    z: &[F],
    dim: usize,
    pairing: &Pairing,
    temperature: F,
    want_grad: bool,
) -> Result<(F, Vec<F>)> {
    let n = check_views(z, dim)?;
    if n != pairing.len() {
        return Err(Error::MalformedPairing(format!(
            "pairing covers {} views, batch has {n}",
            pairing.len()
        )));
    }
    if temperature <= F::zero() {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let inv_t = F::one() / temperature;
    let (unit, norms) = normalize_rows(z, dim)?;
    let mut d_unit = if want_grad { vec![F::zero(); z.len()] } else { Vec::new() };
    let mut row = vec![F::zero(); n];
    let mut total = F::zero();
    for i in 0..n {
        let j = pairing.partner(i);
        let max = logit_row(&unit, dim, i, inv_t, &mut row);
        let mut sum = F::zero();
        for (k, v) in row.iter_mut().enumerate() {
            if k == i {
                *v = F::zero();
            } else {
                *v = (*v - max).exp();
                sum += *v;
            }
        }
        // row[k] now holds exp(s_ik - max); the positive logit is recovered
        // from the stored unit vectors.
        let s_ij = dot(&unit[i * dim..(i + 1) * dim], &unit[j * dim..(j + 1) * dim]) * inv_t;
        total += max + sum.ln() - s_ij;
        if want_grad {
            for k in 0..n {
                if k == i {
                    continue;
                }
                let mut g = row[k] / sum;
                if k == j {
                    g -= F::one();
                }
                let g = g * inv_t;
                if g == F::zero() {
                    continue;
                }
                for d in 0..dim {
                    let zi = unit[i * dim + d];
                    let zk = unit[k * dim + d];
                    d_unit[i * dim + d] += g * zk;
                    d_unit[k * dim + d] += g * zi;
                }
            }
        }
    }
    if !want_grad {
        return Ok((total, Vec::new()));
    }
    let mut dz = vec![F::zero(); z.len()];
    for r in 0..n {
        let u = &unit[r * dim..(r + 1) * dim];
        let du = &d_unit[r * dim..(r + 1) * dim];
        let proj = dot(u, du);
        for d in 0..dim {
            dz[r * dim + d] = (du[d] - u[d] * proj) / norms[r];
        }
    }
    Ok((total, dz))
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits` (`labels.len()` rows of `vocab` columns).
pub fn mlm_loss<F: Scalar>(logits: &[F], vocab: usize, labels: &[usize]) -> Result<F> {
    mlm_loss_impl(logits, vocab, labels, false).map(|(l, _)| l)
}

pub fn mlm_loss_with_grad<F: Scalar>(logits: &[F], vocab: usize, labels: &[usize]) -> Result<(F, Vec<F>)> {
    mlm_loss_impl(logits, vocab, labels, true)
}

fn mlm_loss_impl<F: Scalar>(logits: &[F], vocab: usize, labels: &[usize], want_grad: bool) -> Result<(F, Vec<F>)> {
    if labels.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    if logits.len() != labels.len() * vocab {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} labels over {vocab} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= vocab) {
        return Err(Error::InvalidArgument(format!("label {bad} >= vocab size {vocab}")));
    }
    let inv_m = F::lit(1.0 / labels.len() as f64);
    let mut total = F::zero();
    let mut grad = if want_grad { vec![F::zero(); logits.len()] } else { Vec::new() };
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        if want_grad {
            let g = &mut grad[r * vocab..(r + 1) * vocab];
            for (gv, &v) in g.iter_mut().zip(row) {
                *gv = (v - lse).exp() * inv_m;
            }
            g[label] -= inv_m;
        }
    }
    Ok((total * inv_m, grad))
}

/// Combined objective; both losses carry unit weight.
pub fn total_loss<F: Scalar>(mlm: F, cl: F, mode: LossMode) -> F {
    match mode {
        LossMode::MlmPlusCl => mlm + cl,
        LossMode::MlmOnly => mlm,
        LossMode::ClOnly => cl,
    }
}
