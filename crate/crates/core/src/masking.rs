//! BERT-style masking of original sentences for the masked-language-model
//! objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;
use crate::text::{TokenId, TokenSequence, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingParams {
    pub mask_ratio: f64,
    /// Share of selected positions replaced by `[MASK]`.
    pub mask_token_share: f64,
    /// Share of selected positions replaced by a random vocabulary token.
    pub random_share: f64,
    /// Share of selected positions left unchanged (still predicted).
    pub keep_share: f64,
}

impl Default for MaskingParams {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            mask_token_share: 0.8,
            random_share: 0.1,
            keep_share: 0.1,
        }
    }
}

impl MaskingParams {
    pub fn validate(&self) -> crate::error::Result<()> {
        let shares = [self.mask_token_share, self.random_share, self.keep_share];
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(crate::error::Error::Config(format!(
                "mask_ratio must lie in (0, 1], got {}",
                self.mask_ratio
            )));
        }
        if shares.iter().any(|s| s.is_nan() || *s < 0.0) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(crate::error::Error::Config(format!(
                "mask action shares must be non-negative and sum to 1, got {shares:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    Mask,
    RandomReplace(TokenId),
    KeepUnchanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Selected position to action, ordered by position.
    pub actions: BTreeMap<usize, MaskAction>,
}

impl MaskPlan {
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.actions.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Number of positions selected for a sentence of `len` tokens.
pub fn selection_count(len: usize, ratio: f64) -> usize {
    if len == 0 {
        return 0;
    }
    ((ratio * len as f64).floor() as usize).clamp(1, len)
}

/// Splits `total` into integer counts proportional to `shares` by
/// largest-remainder rounding. Ties on the remainder go to the earlier share.
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Samples which positions to corrupt and how.
///
/// Positions are drawn uniformly without replacement. Random replacements
/// draw a uniform non-special id; a vocabulary without non-special tokens
/// falls back to `[MASK]`.
pub fn sample_mask_plan(
    len: usize,
    params: &MaskingParams,
    rng: &mut CounterRng,
    vocab_size: usize,
) -> MaskPlan {
    let n = selection_count(len, params.mask_ratio);
    let picked = rng.choose_distinct(len, n);
    let counts = largest_remainder(
        n,
        &[params.mask_token_share, params.random_share, params.keep_share],
    );
    let regular = vocab_size.saturating_sub(NUM_SPECIAL);
    let mut actions = BTreeMap::new();
    for (rank, pos) in picked.into_iter().enumerate() {
        let action = if rank < counts[0] {
            MaskAction::Mask
        } else if rank < counts[0] + counts[1] {
            if regular == 0 {
                MaskAction::Mask
            } else {
                MaskAction::RandomReplace((NUM_SPECIAL + rng.index(regular)) as TokenId)
            }
        } else {
            MaskAction::KeepUnchanged
        };
        actions.insert(pos, action);
    }
    MaskPlan { actions }
}

/// A sentence after masking together with its prediction targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSentence {
    pub ids: TokenSequence,
    /// Original id at every selected position.
    pub labels: BTreeMap<usize, TokenId>,
}

pub fn apply_mask(ids: &[TokenId], plan: &MaskPlan) -> MaskedSentence {
    let mut out = ids.to_vec();
    let mut labels = BTreeMap::new();
    for (&pos, &action) in &plan.actions {
        let Some(slot) = out.get_mut(pos) else {
            continue;
        };
        labels.insert(pos, ids[pos]);
        match action {
            MaskAction::Mask => *slot = MASK,
            MaskAction::RandomReplace(id) => *slot = id,
            MaskAction::KeepUnchanged => {}
        }
    }
    MaskedSentence {
        ids: TokenSequence(out),
        labels,
    }
}

impl MaskedSentence {
    /// Writes the labels back, recovering the original sentence.
    pub fn unmask(&self) -> TokenSequence {
        let mut out = self.ids.0.clone();
        for (&pos, &id) in &self.labels {
            out[pos] = id;
        }
        TokenSequence(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_counts() {
        let p = MaskingParams::default();
        assert_eq!(selection_count(20, p.mask_ratio), 3);
        assert_eq!(selection_count(1, p.mask_ratio), 1);
        assert_eq!(selection_count(6, p.mask_ratio), 1);
        assert_eq!(selection_count(7, p.mask_ratio), 1);
        assert_eq!(selection_count(0, p.mask_ratio), 0);
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(1, &[0.8, 0.1, 0.1]), [1, 0, 0]);
        assert_eq!(largest_remainder(3, &[0.8, 0.1, 0.1]), [3, 0, 0]);
        assert_eq!(largest_remainder(10, &[0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(largest_remainder(15, &[0.8, 0.1, 0.1]), [12, 2, 1]);
        assert_eq!(largest_remainder(0, &[0.8, 0.1, 0.1]), [0, 0, 0]);
    }

    #[test]
    fn plan_size_and_determinism() {
        let p = MaskingParams::default();
        let a = sample_mask_plan(20, &p, &mut CounterRng::new(4), 50);
        assert_eq!(a.len(), 3);
        assert_eq!(a, sample_mask_plan(20, &p, &mut CounterRng::new(4), 50));
        let one = sample_mask_plan(1, &p, &mut CounterRng::new(4), 50);
        assert_eq!(one.selected().collect::<Vec<_>>(), [0]);
    }

    #[test]
    fn action_mix_on_large_selection() {
        let p = MaskingParams::default();
        let plan = sample_mask_plan(100, &p, &mut CounterRng::new(8), 50);
        let mut counts = [0usize; 3];
        for a in plan.actions.values() {
            match a {
                MaskAction::Mask => counts[0] += 1,
                MaskAction::RandomReplace(id) => {
                    assert!((*id as usize) >= NUM_SPECIAL && (*id as usize) < 50);
                    counts[1] += 1
                }
                MaskAction::KeepUnchanged => counts[2] += 1,
            }
        }
        assert_eq!(counts, [12, 2, 1]);
    }

    #[test]
    fn apply_mask_labels_and_identity() {
        let ids = vec![10, 11, 12, 13];
        let empty = apply_mask(&ids, &MaskPlan::default());
        assert_eq!(empty.ids.0, ids);
        assert!(empty.labels.is_empty());

        let plan = MaskPlan {
            actions: BTreeMap::from([
                (0, MaskAction::Mask),
                (2, MaskAction::RandomReplace(42)),
                (3, MaskAction::KeepUnchanged),
            ]),
        };
        let m = apply_mask(&ids, &plan);
        assert_eq!(m.ids.0, [MASK, 11, 42, 13]);
        assert_eq!(m.labels, BTreeMap::from([(0, 10), (2, 12), (3, 13)]));
        assert_eq!(m.unmask().0, ids);
    }

    #[test]
    fn tiny_vocab_falls_back_to_mask() {
        let p = MaskingParams::default();
        let plan = sample_mask_plan(200, &p, &mut CounterRng::new(1), NUM_SPECIAL);
        assert!(plan.actions.values().all(|a| !matches!(a, MaskAction::RandomReplace(_))));
    }
}
