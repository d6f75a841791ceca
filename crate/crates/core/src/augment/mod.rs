//! Sentence augmentations: word deletion, span deletion, span reordering and
//! synonym substitution.
//!
//! Each augmentation is split into a sampling step that draws an
//! [`AugmentationPlan`] from a seeded generator and a pure application step.
//! [`augment`] composes the two. Positive pairs are produced by running the
//! same augmentation twice on one sentence with two different seeds.

mod apply;
mod lexicon;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use apply::{
    apply_reorder, apply_span_deletion, apply_substitution, apply_word_deletion,
    collapse_deletions,
};
pub use lexicon::{Lexicon, LexiconCoverage};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::text::{TokenId, TokenSequence};

/// Half-open token index range `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentationKind {
    WordDeletion,
    SpanDeletion,
    Reordering,
    Substitution,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 4] = [
        AugmentationKind::WordDeletion,
        AugmentationKind::SpanDeletion,
        AugmentationKind::Reordering,
        AugmentationKind::Substitution,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            AugmentationKind::WordDeletion => "del-word",
            AugmentationKind::SpanDeletion => "del-span",
            AugmentationKind::Reordering => "reorder",
            AugmentationKind::Substitution => "subs",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationParams {
    /// Fraction of tokens removed by word deletion.
    pub word_deletion_ratio: f64,
    pub span_count: usize,
    /// Span length as a fraction of sentence length (floored, minimum 1).
    pub span_ratio: f64,
    pub reorder_pairs: usize,
    pub substitution_ratio: f64,
    /// Rejection-sampling budget when placing disjoint spans.
    pub max_span_attempts: usize,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            word_deletion_ratio: 0.70,
            span_count: 5,
            span_ratio: 0.05,
            reorder_pairs: 5,
            substitution_ratio: 0.30,
            max_span_attempts: 100,
        }
    }
}

impl AugmentationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("word_deletion_ratio", self.word_deletion_ratio),
            ("span_ratio", self.span_ratio),
            ("substitution_ratio", self.substitution_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn span_len(&self, len: usize) -> usize {
        ((self.span_ratio * len as f64).floor() as usize).max(1)
    }
}

/// A fully sampled augmentation. Applying a plan involves no randomness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentationPlan {
    /// Sorted, distinct token indices.
    WordDeletion(Vec<usize>),
    /// Disjoint non-empty spans sorted by start.
    SpanDeletion(Vec<Span>),
    /// Mutually disjoint span pairs, each ordered `(left, right)`, sorted by
    /// the left span.
    Reordering(Vec<(Span, Span)>),
    /// Position to replacement id.
    Substitution(BTreeMap<usize, TokenId>),
}

impl AugmentationPlan {
    pub fn kind(&self) -> AugmentationKind {
        match self {
            AugmentationPlan::WordDeletion(_) => AugmentationKind::WordDeletion,
            AugmentationPlan::SpanDeletion(_) => AugmentationKind::SpanDeletion,
            AugmentationPlan::Reordering(_) => AugmentationKind::Reordering,
            AugmentationPlan::Substitution(_) => AugmentationKind::Substitution,
        }
    }

    pub fn apply(&self, tokens: &[TokenId]) -> Result<TokenSequence> {
        Ok(match self {
            AugmentationPlan::WordDeletion(idx) => apply_word_deletion(tokens, idx),
            AugmentationPlan::SpanDeletion(spans) => apply_span_deletion(tokens, spans),
            AugmentationPlan::Reordering(pairs) => apply_reorder(tokens, pairs)?,
            AugmentationPlan::Substitution(choices) => apply_substitution(tokens, choices),
        })
    }
}

/// Places up to `count` pairwise disjoint spans of length `span_len` inside
/// `0..len` by rejection over uniform start positions. Returns the spans in
/// placement order.
fn place_spans(
    len: usize,
    span_len: usize,
    count: usize,
    max_attempts: usize,
    rng: &mut CounterRng,
) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::with_capacity(count);
    if span_len == 0 || span_len > len {
        return spans;
    }
    let starts = len - span_len + 1;
    for _ in 0..max_attempts {
        if spans.len() == count {
            break;
        }
        let start = rng.index(starts);
        let candidate = Span::new(start, start + span_len);
        if spans.iter().all(|s| !s.overlaps(&candidate)) {
            spans.push(candidate);
        }
    }
    spans
}

/// Draws an augmentation plan for a sentence of `len` tokens.
///
/// `tokens` is only consulted by substitution, which needs to know which
/// positions have synonyms in `lexicon`.
pub fn sample_plan(
    kind: AugmentationKind,
    params: &AugmentationParams,
    tokens: &[TokenId],
    rng: &mut CounterRng,
    lexicon: &Lexicon,
) -> AugmentationPlan {
    let len = tokens.len();
    match kind {
        AugmentationKind::WordDeletion => {
            let k = (params.word_deletion_ratio * len as f64).floor() as usize;
            let mut idx = rng.choose_distinct(len, k);
            idx.sort_unstable();
            AugmentationPlan::WordDeletion(idx)
        }
        AugmentationKind::SpanDeletion => {
            let mut spans = place_spans(
                len,
                params.span_len(len),
                params.span_count,
                params.max_span_attempts,
                rng,
            );
            spans.sort();
            AugmentationPlan::SpanDeletion(spans)
        }
        AugmentationKind::Reordering => {
            let spans = place_spans(
                len,
                params.span_len(len),
                params.reorder_pairs * 2,
                params.max_span_attempts,
                rng,
            );
            let mut pairs: Vec<(Span, Span)> = spans
                .chunks_exact(2)
                .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
                .collect();
            pairs.sort();
            AugmentationPlan::Reordering(pairs)
        }
        AugmentationKind::Substitution => {
            let candidates: Vec<usize> = (0..len).filter(|&i| lexicon.contains(tokens[i])).collect();
            let k = (params.substitution_ratio * len as f64).floor() as usize;
            let mut picked: Vec<usize> = rng
                .choose_distinct(candidates.len(), k)
                .into_iter()
                .map(|c| candidates[c])
                .collect();
            picked.sort_unstable();
            let choices = picked
                .into_iter()
                .map(|i| {
                    let syns = lexicon.synonyms(tokens[i]);
                    (i, syns[rng.index(syns.len())])
                })
                .collect();
            AugmentationPlan::Substitution(choices)
        }
    }
}

/// Samples a plan from `seed` and applies it.
pub fn augment(
    sentence: &[TokenId],
    kind: AugmentationKind,
    params: &AugmentationParams,
    seed: u64,
    lexicon: &Lexicon,
) -> Result<TokenSequence> {
    let mut rng = CounterRng::new(seed);
    sample_plan(kind, params, sentence, &mut rng, lexicon).apply(sentence)
}

/// An ordered composition of augmentation kinds, e.g. `subs+del-span`.
///
/// Stages draw from one generator seeded once, each stage sampling its plan
/// against the output of the previous one. After every stage adjacent
/// `[DEL]` runs are collapsed, so a reorder that moves two deletion markers
/// next to each other still yields a single marker.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AugmentationPipeline(Vec<AugmentationKind>);

impl AugmentationPipeline {
    pub fn new(stages: Vec<AugmentationKind>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidArgument("empty augmentation pipeline".into()));
        }
        for (i, k) in stages.iter().enumerate() {
            if stages[..i].contains(k) {
                return Err(Error::InvalidArgument(format!("augmentation {k} listed twice")));
            }
        }
        Ok(Self(stages))
    }

    pub fn single(kind: AugmentationKind) -> Self {
        Self(vec![kind])
    }

    pub fn stages(&self) -> &[AugmentationKind] {
        &self.0
    }

    /// Pipelines reported to train unstably (collapse or gradient blow-up)
    /// because the two views are too easy to tell apart.
    pub fn is_unstable(&self) -> bool {
        self.0
            .iter()
            .all(|k| matches!(k, AugmentationKind::Substitution | AugmentationKind::Reordering))
    }

    pub fn apply(
        &self,
        sentence: &[TokenId],
        params: &AugmentationParams,
        seed: u64,
        lexicon: &Lexicon,
    ) -> Result<TokenSequence> {
        let mut rng = CounterRng::new(seed);
        if let [kind] = self.0.as_slice() {
            return sample_plan(*kind, params, sentence, &mut rng, lexicon).apply(sentence);
        }
        let mut current = TokenSequence(sentence.to_vec());
        for &kind in &self.0 {
            let plan = sample_plan(kind, params, &current, &mut rng, lexicon);
            current = collapse_deletions(&plan.apply(&current)?);
        }
        Ok(current)
    }
}

impl fmt::Display for AugmentationPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|k| k.cli_name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for AugmentationPipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .split('+')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }
}

impl Serialize for AugmentationPipeline {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AugmentationPipeline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::DEL;

    fn params() -> AugmentationParams {
        AugmentationParams::default()
    }

    fn seq(n: usize) -> Vec<TokenId> {
        (0..n as TokenId).map(|i| 100 + i).collect()
    }

    #[test]
    fn word_deletion_plan_size() {
        let mut rng = CounterRng::new(1);
        let plan = sample_plan(AugmentationKind::WordDeletion, &params(), &seq(10), &mut rng, &Lexicon::empty());
        let AugmentationPlan::WordDeletion(idx) = plan else { panic!() };
        assert_eq!(idx.len(), 7);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 10));
    }

    #[test]
    fn span_deletion_short_sentence() {
        for seed in 0..50 {
            let mut rng = CounterRng::new(seed);
            let plan = sample_plan(AugmentationKind::SpanDeletion, &params(), &seq(3), &mut rng, &Lexicon::empty());
            let AugmentationPlan::SpanDeletion(spans) = plan else { panic!() };
            assert!(spans.len() <= 3 && !spans.is_empty());
            assert!(spans.iter().all(|s| s.len() == 1));
            assert!(spans.windows(2).all(|w| w[0].end <= w[1].start));
        }
    }

    #[test]
    fn span_length_rule() {
        let p = params();
        assert_eq!(p.span_len(3), 1);
        assert_eq!(p.span_len(39), 1);
        assert_eq!(p.span_len(40), 2);
        assert_eq!(p.span_len(100), 5);
    }

    #[test]
    fn long_sentence_gets_five_spans_and_pairs() {
        let mut rng = CounterRng::new(9);
        let s = seq(60);
        let AugmentationPlan::SpanDeletion(spans) =
            sample_plan(AugmentationKind::SpanDeletion, &params(), &s, &mut rng, &Lexicon::empty())
        else {
            panic!()
        };
        assert_eq!(spans.len(), 5);
        assert!(spans.iter().all(|s| s.len() == 3));
        let AugmentationPlan::Reordering(pairs) =
            sample_plan(AugmentationKind::Reordering, &params(), &s, &mut rng, &Lexicon::empty())
        else {
            panic!()
        };
        assert_eq!(pairs.len(), 5);
        let mut all: Vec<Span> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        all.sort();
        assert!(all.windows(2).all(|w| w[0].end <= w[1].start));
    }

    #[test]
    fn reorder_single_token_sentence_is_identity() {
        let out = augment(&[7], AugmentationKind::Reordering, &params(), 3, &Lexicon::empty()).unwrap();
        assert_eq!(out.0, [7]);
    }

    #[test]
    fn substitution_limited_by_lexicon_hits() {
        let lex = Lexicon::from_pairs([(100, vec![200, 201])]);
        let s = seq(10);
        let mut rng = CounterRng::new(5);
        let AugmentationPlan::Substitution(choices) =
            sample_plan(AugmentationKind::Substitution, &params(), &s, &mut rng, &lex)
        else {
            panic!()
        };
        // floor(0.3 * 10) = 3 requested, one candidate available.
        assert_eq!(choices.len(), 1);
        assert!(matches!(choices.get(&0), Some(200 | 201)));
    }

    #[test]
    fn augment_is_deterministic_and_seed_sensitive() {
        let s = seq(20);
        let lex = Lexicon::empty();
        let k = AugmentationKind::WordDeletion;
        let a = augment(&s, k, &params(), 77, &lex).unwrap();
        assert_eq!(a, augment(&s, k, &params(), 77, &lex).unwrap());
        let differs = (0..10).any(|seed| augment(&s, k, &params(), seed, &lex).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn zero_ratio_word_deletion_is_identity() {
        let p = AugmentationParams {
            word_deletion_ratio: 0.0,
            ..params()
        };
        let s = seq(12);
        assert_eq!(augment(&s, AugmentationKind::WordDeletion, &p, 1, &Lexicon::empty()).unwrap().0, s);
    }

    #[test]
    fn pipeline_parse_and_display() {
        let p: AugmentationPipeline = "subs+del-span".parse().unwrap();
        assert_eq!(p.stages(), [AugmentationKind::Substitution, AugmentationKind::SpanDeletion]);
        assert_eq!(p.to_string(), "subs+del-span");
        assert!("del-word+del-word".parse::<AugmentationPipeline>().is_err());
        assert!("shuffle".parse::<AugmentationPipeline>().is_err());
        assert!("reorder".parse::<AugmentationPipeline>().unwrap().is_unstable());
        assert!(!"del-span+reorder".parse::<AugmentationPipeline>().unwrap().is_unstable());
    }

    #[test]
    fn composed_pipeline_never_leaves_adjacent_del() {
        let p: AugmentationPipeline = "del-word+reorder".parse().unwrap();
        for seed in 0..500 {
            let out = p.apply(&seq(25), &params(), seed, &Lexicon::empty()).unwrap();
            assert!(out.windows(2).all(|w| !(w[0] == DEL && w[1] == DEL)));
        }
    }

    #[test]
    fn single_stage_pipeline_matches_augment() {
        let s = seq(30);
        let lex = Lexicon::empty();
        for kind in AugmentationKind::ALL {
            let p = AugmentationPipeline::single(kind);
            assert_eq!(
                p.apply(&s, &params(), 4, &lex).unwrap(),
                augment(&s, kind, &params(), 4, &lex).unwrap()
            );
        }
    }
}
