//! Contrastive mini-batches: 2N augmented views in interleaved pair layout
//! plus the N masked originals for the masked-language-model objective.

use crate::augment::{AugmentationParams, AugmentationPipeline, Lexicon};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, sample_mask_plan, MaskingParams};
use crate::rng::{mix, CounterRng};
use crate::text::{TokenId, TokenSequence, CLS, PAD};

/// Seed-derivation slot used for the masked original of a sentence; slots 0
/// and 1 are the two augmented views.
const MASK_SLOT: u64 = 2;

/// Partner of view `i` under the interleaved layout: views `2k` and `2k+1`
/// come from sentence `k`.
pub fn positive_of(i: usize, n: usize) -> Result<usize> {
    if i >= 2 * n {
        return Err(Error::InvalidArgument(format!(
            "view index {i} out of range for {} views",
            2 * n
        )));
    }
    Ok(i ^ 1)
}

/// Rows of token ids, each starting with `[CLS]` and right-padded with `[PAD]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    ids: Vec<TokenId>,
    lengths: Vec<usize>,
    max_len: usize,
}

impl PaddedBatch {
    /// Prepends `[CLS]` to every sequence and pads to the longest row.
    pub fn from_sequences<S: AsRef<[TokenId]>>(seqs: &[S]) -> Self {
        let max_len = seqs.iter().map(|s| s.as_ref().len() + 1).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * max_len);
        let mut lengths = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = s.as_ref();
            ids.push(CLS);
            ids.extend_from_slice(s);
            ids.resize(ids.len() + max_len - s.len() - 1, PAD);
            lengths.push(s.len() + 1);
        }
        Self {
            ids,
            lengths,
            max_len,
        }
    }

    /// Builds a batch from rows that already carry `[CLS]`, padding each to
    /// `max_len`.
    pub fn from_rows(rows: &[Vec<TokenId>], max_len: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len() * max_len);
        let mut lengths = Vec::with_capacity(rows.len());
        for row in rows {
            if row.is_empty() || row.len() > max_len {
                return Err(Error::InvalidArgument(format!(
                    "row length {} not in 1..={max_len}",
                    row.len()
                )));
            }
            ids.extend_from_slice(row);
            ids.resize(ids.len() + max_len - row.len(), PAD);
            lengths.push(row.len());
        }
        Ok(Self {
            ids,
            lengths,
            max_len,
        })
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Full padded row.
    pub fn row(&self, i: usize) -> &[TokenId] {
        &self.ids[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Non-padding prefix of a row (including `[CLS]`).
    pub fn tokens(&self, i: usize) -> &[TokenId] {
        &self.row(i)[..self.lengths[i]]
    }

    pub fn attention_mask(&self, i: usize) -> Vec<bool> {
        (0..self.max_len).map(|p| p < self.lengths[i]).collect()
    }

    /// Sub-batch of the selected rows, re-padded to their own maximum.
    pub fn select(&self, rows: impl IntoIterator<Item = usize>) -> Self {
        let seqs: Vec<&[TokenId]> = rows.into_iter().map(|r| &self.tokens(r)[1..]).collect();
        Self::from_sequences(&seqs)
    }
}

/// One masked-language-model prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlmTarget {
    /// Row in the masked-originals batch.
    pub row: usize,
    /// Position within the row (`[CLS]` is position 0).
    pub position: usize,
    pub label: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    /// 2N views; rows `2k` and `2k+1` are the positive pair of sentence `k`.
    pub views: PaddedBatch,
    /// N masked original sentences.
    pub masked: PaddedBatch,
    pub mlm_targets: Vec<MlmTarget>,
    /// Corpus index of each sentence, for tracing.
    pub source: Vec<usize>,
    pub batch_index: u64,
}

impl ContrastiveBatch {
    pub fn num_sentences(&self) -> usize {
        self.source.len()
    }

    /// m(i, j): 1 when views `i` and `j` form a positive pair.
    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        i != j && i / 2 == j / 2 && i < self.views.rows() && j < self.views.rows()
    }

    /// First (`view = 0`) or second (`view = 1`) view of every sentence.
    pub fn view_half(&self, view: usize) -> PaddedBatch {
        self.views
            .select((0..self.num_sentences()).map(|k| 2 * k + view))
    }
}

/// Everything needed to turn sentences into a [`ContrastiveBatch`].
#[derive(Debug, Clone)]
pub struct BatchBuilder {
    pub pipeline: AugmentationPipeline,
    pub augmentation: AugmentationParams,
    pub masking: MaskingParams,
    pub lexicon: Lexicon,
    pub vocab_size: usize,
    pub global_seed: u64,
}

impl BatchBuilder {
    pub fn view_seed(&self, batch_index: u64, sentence: usize, view: u64) -> u64 {
        mix(self.global_seed, &[batch_index, sentence as u64, view])
    }

    pub fn build(
        &self,
        sentences: &[&[TokenId]],
        source: &[usize],
        batch_index: u64,
    ) -> Result<ContrastiveBatch> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("batch needs at least one sentence".into()));
        }
        if source.len() != sentences.len() {
            return Err(Error::InvalidArgument("source ids do not match sentences".into()));
        }
        let mut views: Vec<TokenSequence> = Vec::with_capacity(sentences.len() * 2);
        let mut masked: Vec<TokenSequence> = Vec::with_capacity(sentences.len());
        let mut mlm_targets = Vec::new();
        for (k, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("sentence {k} is empty")));
            }
            for v in 0..2 {
                let seed = self.view_seed(batch_index, k, v);
                views.push(
                    self.pipeline
                        .apply(s, &self.augmentation, seed, &self.lexicon)?,
                );
            }
            let mut rng = CounterRng::new(self.view_seed(batch_index, k, MASK_SLOT));
            let plan = sample_mask_plan(s.len(), &self.masking, &mut rng, self.vocab_size);
            let m = apply_mask(s, &plan);
            mlm_targets.extend(m.labels.iter().map(|(&pos, &label)| MlmTarget {
                row: k,
                position: pos + 1,
                label,
            }));
            masked.push(m.ids);
        }
        Ok(ContrastiveBatch {
            views: PaddedBatch::from_sequences(&views),
            masked: PaddedBatch::from_sequences(&masked),
            mlm_targets,
            source: source.to_vec(),
            batch_index,
        })
    }
}

/// Deterministic assignment of corpus sentences to batches.
///
/// The corpus is reshuffled every epoch with a seed derived from the global
/// seed and the epoch number; a trailing partial batch is dropped. A corpus
/// smaller than the batch size yields one batch holding the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub corpus_len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSchedule {
    pub fn batches_per_epoch(&self) -> usize {
        (self.corpus_len / self.batch_size.max(1)).max(1)
    }

    pub fn indices(&self, batch_index: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch() as u64;
        let epoch = batch_index / per_epoch;
        let slot = (batch_index % per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.corpus_len).collect();
        CounterRng::new(mix(self.seed, &[0xE90C, epoch])).shuffle(&mut order);
        let size = self.batch_size.min(self.corpus_len);
        order[slot * size..(slot + 1) * size].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentationKind;
    use crate::text::MASK;

    fn builder() -> BatchBuilder {
        BatchBuilder {
            pipeline: AugmentationPipeline::single(AugmentationKind::SpanDeletion),
            augmentation: AugmentationParams::default(),
            masking: MaskingParams::default(),
            lexicon: Lexicon::empty(),
            vocab_size: 40,
            global_seed: 7,
        }
    }

    fn sentences() -> Vec<Vec<TokenId>> {
        vec![(10..20).collect(), (20..26).collect(), (30..38).collect()]
    }

    #[test]
    fn positive_of_examples() {
        assert_eq!(positive_of(0, 1).unwrap(), 1);
        assert_eq!(positive_of(5, 3).unwrap(), 4);
        assert!(positive_of(6, 3).is_err());
        for i in 0..8 {
            assert_eq!(positive_of(positive_of(i, 4).unwrap(), 4).unwrap(), i);
        }
    }

    #[test]
    fn pairing_layout() {
        let s = sentences();
        let refs: Vec<&[TokenId]> = s[..2].iter().map(Vec::as_slice).collect();
        let b = builder().build(&refs, &[0, 1], 0).unwrap();
        assert_eq!(b.views.rows(), 4);
        let mut total = 0;
        for i in 0..4 {
            for j in 0..4 {
                let m = b.is_positive(i, j);
                total += m as usize;
                assert_eq!(m, matches!((i, j), (0, 1) | (1, 0) | (2, 3) | (3, 2)));
            }
        }
        assert_eq!(total, 4);
    }

    #[test]
    fn views_start_with_cls_and_pad_is_suffix() {
        let s = sentences();
        let refs: Vec<&[TokenId]> = s.iter().map(Vec::as_slice).collect();
        let b = builder().build(&refs, &[0, 1, 2], 3).unwrap();
        for batch in [&b.views, &b.masked] {
            for r in 0..batch.rows() {
                let row = batch.row(r);
                assert_eq!(row[0], CLS);
                let len = batch.lengths()[r];
                assert!(row[..len].iter().all(|&t| t != PAD));
                assert!(row[len..].iter().all(|&t| t == PAD));
            }
        }
        for t in &b.mlm_targets {
            let orig = &s[t.row];
            assert_eq!(orig[t.position - 1], t.label);
            let tok = b.masked.row(t.row)[t.position];
            assert!(tok == MASK || tok == t.label || tok as usize >= 5);
        }
    }

    #[test]
    fn single_sentence_batch() {
        let s = sentences();
        let b = builder().build(&[&s[0]], &[0], 0).unwrap();
        assert_eq!(b.views.rows(), 2);
        assert!(b.is_positive(0, 1));
        assert_eq!(b.view_half(0).rows(), 1);
    }

    #[test]
    fn build_is_deterministic() {
        let s = sentences();
        let refs: Vec<&[TokenId]> = s.iter().map(Vec::as_slice).collect();
        let b1 = builder().build(&refs, &[0, 1, 2], 9).unwrap();
        let b2 = builder().build(&refs, &[0, 1, 2], 9).unwrap();
        assert_eq!(b1, b2);
        let b3 = builder().build(&refs, &[0, 1, 2], 10).unwrap();
        assert_ne!(b1.views, b3.views);
    }

    #[test]
    fn view_half_keeps_pair_order() {
        let s = sentences();
        let refs: Vec<&[TokenId]> = s.iter().map(Vec::as_slice).collect();
        let b = builder().build(&refs, &[0, 1, 2], 1).unwrap();
        let a = b.view_half(0);
        let c = b.view_half(1);
        for k in 0..3 {
            assert_eq!(a.tokens(k), b.views.tokens(2 * k));
            assert_eq!(c.tokens(k), b.views.tokens(2 * k + 1));
        }
    }

    #[test]
    fn schedule_covers_each_epoch_once() {
        let sched = BatchSchedule {
            corpus_len: 10,
            batch_size: 3,
            seed: 1,
        };
        assert_eq!(sched.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|b| sched.indices(b)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_ne!(sched.indices(0), sched.indices(3));
        let small = BatchSchedule {
            corpus_len: 2,
            batch_size: 8,
            seed: 1,
        };
        assert_eq!(small.indices(5).len(), 2);
    }
}
