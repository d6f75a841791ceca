//! Run configuration and the end-to-end pre-training, embedding and
//! evaluation workflows.
//!
//! A pre-training run directory contains `config.echo` (the effective
//! configuration as TOML), `metrics.csv`, `checkpoints/step-<n>.clr` and
//! `report.txt`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationParams, AugmentationPipeline, Lexicon};
use crate::batching::BatchBuilder;
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::encoder::{EncoderConfig, ModelParameters, Pooling};
use crate::error::{Error, Result};
use crate::eval::{embed_texts, read_eval_pairs, sts_eval, StsResult};
use crate::masking::MaskingParams;
use crate::optim::OptimizerState;
use crate::rng::mix;
use crate::text::{build_vocab, read_corpus, LengthFilter, TokenSequence, Vocabulary};
use crate::train::{StepMetrics, TrainConfig, Trainer, METRICS_HEADER};

/// Every knob of a pre-training run. Missing keys take their defaults and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Sentences per batch; each contributes two views.
    pub batch_size: usize,
    /// Batch-preparation threads.
    pub workers: usize,
    /// Checkpoint interval in steps; the final step is always saved.
    pub checkpoint_every: u64,
    /// One sentence per line.
    pub corpus: Option<PathBuf>,
    /// Existing vocabulary file; built from the corpus when absent.
    pub vocab: Option<PathBuf>,
    /// Synonym lexicon for substitution, `word<TAB>syn1,syn2`.
    pub lexicon: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub augmentation: AugmentationPipeline,
    pub augmentation_params: AugmentationParams,
    pub masking: MaskingParams,
    /// `vocab_size = 0` means "size of the vocabulary".
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            workers: 1,
            checkpoint_every: 500,
            corpus: None,
            vocab: None,
            lexicon: None,
            run_dir: PathBuf::from("run"),
            min_len: 4,
            max_len: 64,
            vocab_min_freq: 1,
            vocab_max_size: 30_000,
            augmentation: "del-span".parse().expect("valid pipeline"),
            augmentation_params: AugmentationParams::default(),
            masking: MaskingParams::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 1 <= min_len <= max_len, got {} and {}",
                self.min_len, self.max_len
            )));
        }
        if self.max_len + 1 > self.encoder.max_positions {
            return Err(Error::Config(format!(
                "max_len {} plus [CLS] exceeds encoder max_positions {}",
                self.max_len, self.encoder.max_positions
            )));
        }
        self.augmentation_params.validate()?;
        self.masking.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn length_filter(&self) -> LengthFilter {
        LengthFilter {
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

/// Tokenised corpus with its vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocabulary: Vocabulary,
    pub sentences: Vec<TokenSequence>,
}

/// Encodes `texts` with `vocabulary`, or with a vocabulary built from them.
pub fn prepare_corpus(texts: &[String], vocabulary: Option<Vocabulary>, cfg: &RunConfig) -> Result<PreparedCorpus> {
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocabulary = match vocabulary {
        Some(v) => v,
        None => build_vocab(texts, cfg.vocab_min_freq, cfg.vocab_max_size)?,
    };
    let sentences = texts.iter().map(|t| vocabulary.encode_text(t)).collect();
    Ok(PreparedCorpus { vocabulary, sentences })
}

fn load_corpus(cfg: &RunConfig) -> Result<PreparedCorpus> {
    let path = cfg
        .corpus
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus given".into()))?;
    let texts = read_corpus(path, cfg.length_filter())?;
    let vocab = cfg.vocab.as_deref().map(Vocabulary::load).transpose()?;
    prepare_corpus(&texts, vocab, cfg)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub params: ModelParameters<f32>,
    pub vocabulary: Vocabulary,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step-{step}.clr"))
}

/// Pre-trains on the configured corpus file.
pub fn pretrain(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    pretrain_prepared(cfg, corpus, log)
}

/// Pre-trains on an already tokenised corpus, writing the run directory.
pub fn pretrain_prepared(cfg: &RunConfig, corpus: PreparedCorpus, log: &mut dyn FnMut(&str)) -> Result<PretrainOutcome> {
    let mut cfg = cfg.clone();
    let vocab_len = corpus.vocabulary.len();
    if cfg.encoder.vocab_size == 0 {
        cfg.encoder.vocab_size = vocab_len;
    } else if cfg.encoder.vocab_size != vocab_len {
        return Err(Error::ConfigMismatch(format!(
            "encoder vocab_size {} but vocabulary has {vocab_len} entries",
            cfg.encoder.vocab_size
        )));
    }
    cfg.validate()?;
    if cfg.augmentation.is_unstable() {
        log(&format!(
            "warning: augmentation '{}' alone is known to make contrastive training unstable (gradient explosion); clipping at {}",
            cfg.augmentation, cfg.train.grad_clip
        ));
    }
    let lexicon = match &cfg.lexicon {
        Some(p) => Lexicon::load(p, &corpus.vocabulary)?,
        None => Lexicon::empty(),
    };
    let dir = &cfg.run_dir;
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    write_file(&dir.join("config.echo"), cfg.to_toml().as_bytes())?;

    let builder = BatchBuilder {
        pipeline: cfg.augmentation.clone(),
        augmentation: cfg.augmentation_params,
        masking: cfg.masking,
        lexicon,
        vocab_size: vocab_len,
        global_seed: cfg.seed,
    };
    let trainer = Trainer {
        corpus: &corpus.sentences,
        builder,
        batch_size: cfg.batch_size,
        config: cfg.train,
        workers: cfg.workers,
    };
    let mut params = ModelParameters::<f32>::init(&cfg.encoder, mix(cfg.seed, &[0x1417]))?;
    let mut state = OptimizerState::new(&params);
    let metrics_path = dir.join("metrics.csv");
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics_file, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    let total = cfg.train.schedule.total_steps;
    let mut checkpoints = Vec::new();
    let vocab = &corpus.vocabulary;
    let metrics = trainer.run(&mut params, &mut state, total, |m, p, s| {
        writeln!(metrics_file, "{}", m.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
        let due = cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0;
        if due || m.step == total {
            metrics_file.flush().map_err(|e| Error::io(&metrics_path, e))?;
            let path = checkpoint_path(dir, m.step);
            save_checkpoint(&path, p, Some(s), m.step, Some(vocab))?;
            log(&format!(
                "step {}: total loss {:.4} (mlm {:.4}, cl {:.4}), saved {}",
                m.step,
                m.total_loss,
                m.mlm_loss,
                m.cl_loss,
                path.display()
            ));
            checkpoints.push(path);
        }
        Ok(())
    })?;
    metrics_file.flush().map_err(|e| Error::io(&metrics_path, e))?;
    write_file(&dir.join("report.txt"), pretrain_report(&cfg, &corpus, &params, &metrics).as_bytes())?;
    Ok(PretrainOutcome {
        metrics,
        checkpoints,
        params,
        vocabulary: corpus.vocabulary,
    })
}

fn pretrain_report(
    cfg: &RunConfig,
    corpus: &PreparedCorpus,
    params: &ModelParameters<f32>,
    metrics: &[StepMetrics],
) -> String {
    let mut s = String::new();
    s.push_str(&format!("sentences: {}\n", corpus.sentences.len()));
    s.push_str(&format!("vocabulary: {}\n", corpus.vocabulary.len()));
    s.push_str(&format!("parameters: {}\n", params.num_parameters()));
    s.push_str(&format!("augmentation: {}\n", cfg.augmentation));
    s.push_str(&format!("loss mode: {:?}\n", cfg.train.loss.mode));
    s.push_str(&format!("steps: {}\n", metrics.len()));
    if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
        s.push_str(&format!(
            "first step: mlm {} cl {} total {}\n",
            first.mlm_loss, first.cl_loss, first.total_loss
        ));
        s.push_str(&format!(
            "last step: mlm {} cl {} total {}\n",
            last.mlm_loss, last.cl_loss, last.total_loss
        ));
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint together with the vocabulary stored in it.
pub fn load_model(path: &Path) -> Result<(Checkpoint, Vocabulary)> {
    let mut ck = load_checkpoint(path, None)?;
    let vocab = ck
        .vocabulary
        .take()
        .ok_or_else(|| Error::Config(format!("{} carries no vocabulary", path.display())))?;
    Ok((ck, vocab))
}

/// Embeds each line of `texts` with a checkpoint.
pub fn embed_with_checkpoint(checkpoint: &Path, texts: &[String], pooling: Pooling) -> Result<Vec<Vec<f32>>> {
    let (ck, vocab) = load_model(checkpoint)?;
    embed_texts(&ck.params, &vocab, texts, pooling)
}

/// Scores an eval-pairs file with a checkpoint.
pub fn eval_with_checkpoint(checkpoint: &Path, pairs: &Path, pooling: Pooling) -> Result<StsResult> {
    let (ck, vocab) = load_model(checkpoint)?;
    let pairs = read_eval_pairs(pairs)?;
    sts_eval(&ck.params, &vocab, &pairs, pooling)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_files_keep_defaults_and_unknown_keys_fail() {
        let cfg = RunConfig::from_toml("seed = 7\naugmentation = \"subs+del-span\"\n[train.schedule]\ntotal_steps = 40\nwarmup_steps = 4\n")
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.augmentation.to_string(), "subs+del-span");
        assert_eq!(cfg.train.schedule.total_steps, 40);
        assert_eq!(cfg.train.schedule.peak_lr, 6e-4);
        assert_eq!(cfg.batch_size, 64);
        assert!(RunConfig::from_toml("sede = 7\n").is_err());
        assert!(RunConfig::from_toml("[encoder]\nlayerz = 2\n").is_err());
        assert!(RunConfig::from_toml("augmentation = \"shuffle\"\n").is_err());
    }

    #[test]
    fn validation_catches_inconsistent_settings() {
        let mut cfg = RunConfig {
            max_len: 80,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.max_len = 64;
        cfg.masking.keep_share = 0.5;
        assert!(cfg.validate().is_err());
    }
}
