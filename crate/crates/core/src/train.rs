//! Joint objective over a contrastive batch, the single training step and the
//! multi-step loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::batching::{BatchBuilder, BatchSchedule, ContrastiveBatch};
use crate::encoder::{pool, pool_backward, Mode, ModelParameters, Pooling};
use crate::error::{Error, Result};
use crate::objectives::{contrastive_loss_with_grad, mlm_loss_with_grad, total_loss, LossConfig, Pairing};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, OptimizerState, Schedule};
use crate::rng::mix;
use crate::scalar::Scalar;
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Pooling feeding the projection head.
    pub pooling: Pooling,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            pooling: Pooling::Cls,
            adam: AdamConfig::default(),
            schedule: Schedule::default(),
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.adam.validate()?;
        self.schedule.validate()?;
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(Error::Config(format!("grad_clip must be >= 0, got {}", self.grad_clip)));
        }
        Ok(())
    }

    pub fn clip(&self) -> Option<f64> {
        (self.grad_clip > 0.0).then_some(self.grad_clip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F> {
    pub mlm: F,
    pub cl: F,
    pub total: F,
}

/// Evaluates the configured objective on `batch`, accumulating gradients
/// into `grads` when given.
///
/// Runs the encoder once over the first views, once over the second views
/// and once over the masked originals; forwards a mode does not need are
/// skipped and their loss reported as zero. `dropout_seed = None` evaluates
/// without dropout.
pub fn batch_loss<F: Scalar>(
    params: &ModelParameters<F>,
    batch: &ContrastiveBatch,
    loss: &LossConfig,
    pooling: Pooling,
    dropout_seed: Option<u64>,
    mut grads: Option<&mut ModelParameters<F>>,
) -> Result<LossBreakdown<F>> {
    let mode = |slot: u64| match dropout_seed {
        Some(s) => Mode::Train { seed: mix(s, &[slot]) },
        None => Mode::Eval,
    };
    let mut cl = F::zero();
    if loss.mode.uses_cl() {
        let n = batch.num_sentences();
        let pd = params.config.projection_dim;
        let mut halves = Vec::with_capacity(2);
        for v in 0..2 {
            let views = batch.view_half(v);
            let (h, cache) = params.encode(&views, mode(v as u64))?;
            let pooled = pool(&h, pooling);
            let (z, pc) = params.project(&pooled);
            halves.push((h, cache, pc, z));
        }
        let mut z = vec![F::zero(); 2 * n * pd];
        for (v, half) in halves.iter().enumerate() {
            for k in 0..n {
                z[(2 * k + v) * pd..(2 * k + v + 1) * pd].copy_from_slice(&half.3[k * pd..(k + 1) * pd]);
            }
        }
        let (value, dz) = contrastive_loss_with_grad(&z, pd, &Pairing::interleaved(n), F::lit(loss.temperature))?;
        cl = value;
        if let Some(g) = grads.as_deref_mut() {
            for (v, (h, cache, pc, _)) in halves.iter().enumerate() {
                let mut dzh = vec![F::zero(); n * pd];
                for k in 0..n {
                    dzh[k * pd..(k + 1) * pd].copy_from_slice(&dz[(2 * k + v) * pd..(2 * k + v + 1) * pd]);
                }
                let dpooled = params.project_backward(pc, &dzh, g);
                let dh = pool_backward(h, pooling, &dpooled);
                params.encode_backward(cache, &dh, g);
            }
        }
    }
    let mut mlm = F::zero();
    if loss.mode.uses_mlm() {
        if batch.mlm_targets.is_empty() {
            return Err(Error::NoMaskedPositions);
        }
        let (h, cache) = params.encode(&batch.masked, mode(2))?;
        let positions: Vec<(usize, usize)> = batch.mlm_targets.iter().map(|t| (t.row, t.position)).collect();
        let labels: Vec<usize> = batch.mlm_targets.iter().map(|t| t.label as usize).collect();
        let (logits, gathered) = params.mlm_logits(&h, &positions);
        let (value, dlogits) = mlm_loss_with_grad(&logits, params.config.vocab_size, &labels)?;
        mlm = value;
        if let Some(g) = grads {
            let dh = params.mlm_backward(&h, &positions, &gathered, &dlogits, g);
            params.encode_backward(&cache, &dh, g);
        }
    }
    Ok(LossBreakdown {
        mlm,
        cl,
        total: total_loss(mlm, cl, loss.mode),
    })
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub mlm_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub const METRICS_HEADER: &str = "step,lr,mlm_loss,cl_loss,total_loss,grad_norm";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.mlm_loss, self.cl_loss, self.total_loss, self.grad_norm
        )
    }
}

/// Forward, backward, clipping and one Adam update. The learning rate is
/// `lr_at` of the incremented step counter.
pub fn train_step<F: Scalar>(
    batch: &ContrastiveBatch,
    params: &mut ModelParameters<F>,
    state: &mut OptimizerState<F>,
    cfg: &TrainConfig,
    dropout_seed: Option<u64>,
) -> Result<StepMetrics> {
    let mut grads = params.zeros_like();
    let losses = batch_loss(params, batch, &cfg.loss, cfg.pooling, dropout_seed, Some(&mut grads))?;
    if !losses.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            batch: Some(batch.batch_index),
        });
    }
    let grad_norm = clip_global_norm(&mut grads, cfg.clip());
    let step = state.t + 1;
    let lr = cfg.schedule.lr_at(step);
    adam_step(params, &grads, state, lr, &cfg.adam)?;
    debug_assert!(params.is_finite(), "non-finite parameter after step {step}");
    Ok(StepMetrics {
        step,
        lr,
        mlm_loss: losses.mlm.as_f64(),
        cl_loss: losses.cl.as_f64(),
        total_loss: losses.total.as_f64(),
        grad_norm,
    })
}

/// Everything that determines the batch stream and the updates of a run.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub corpus: &'a [TokenSequence],
    pub builder: BatchBuilder,
    pub batch_size: usize,
    pub config: TrainConfig,
    /// Threads used to prepare batches ahead of the optimizer; results do
    /// not depend on it.
    pub workers: usize,
}

impl Trainer<'_> {
    fn schedule(&self) -> BatchSchedule {
        BatchSchedule {
            corpus_len: self.corpus.len(),
            batch_size: self.batch_size,
            seed: self.builder.global_seed,
        }
    }

    /// The batch consumed by step `index + 1`.
    pub fn batch(&self, index: u64) -> Result<ContrastiveBatch> {
        let source = self.schedule().indices(index);
        let sentences: Vec<&[u32]> = source.iter().map(|&i| &self.corpus[i][..]).collect();
        self.builder.build(&sentences, &source, index)
    }

    pub fn dropout_seed(&self, index: u64) -> u64 {
        mix(self.builder.global_seed, &[0xD50F, index])
    }

    fn prepare(&self, indices: std::ops::Range<u64>) -> Vec<Result<ContrastiveBatch>> {
        let workers = self.workers.max(1);
        if workers == 1 || indices.end - indices.start <= 1 {
            return indices.map(|i| self.batch(i)).collect();
        }
        let all: Vec<u64> = indices.collect();
        let chunk = all.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = all
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|&i| self.batch(i)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("batch worker panicked"))
                .collect()
        })
    }

    /// Runs `steps` further training steps, continuing from `state.t`.
    /// `on_step` sees every step's metrics and the updated model.
    pub fn run<F, C>(
        &self,
        params: &mut ModelParameters<F>,
        state: &mut OptimizerState<F>,
        steps: u64,
        mut on_step: C,
    ) -> Result<Vec<StepMetrics>>
    where
        F: Scalar,
        C: FnMut(&StepMetrics, &ModelParameters<F>, &OptimizerState<F>) -> Result<()>,
    {
        if self.corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        self.config.validate()?;
        let mut log = Vec::with_capacity(steps as usize);
        let end = state.t + steps;
        let ahead = self.workers.max(1) as u64 * 2;
        while state.t < end {
            let start = state.t;
            let batches = self.prepare(start..end.min(start + ahead));
            for batch in batches {
                let batch = batch?;
                let seed = self.dropout_seed(batch.batch_index);
                let m = train_step(&batch, params, state, &self.config, Some(seed))?;
                on_step(&m, params, state)?;
                log.push(m);
            }
        }
        Ok(log)
    }
}

/// Writes the metric log as CSV.
pub fn write_metrics<W: Write>(out: &mut W, rows: &[StepMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
