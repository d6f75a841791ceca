//! Pure application of sampled augmentation plans.

use std::collections::BTreeMap;

use super::Span;
use crate::error::{Error, Result};
use crate::text::{TokenId, TokenSequence, DEL};

/// Collapses every maximal run of consecutive `[DEL]` tokens into one.
pub fn collapse_deletions(ids: &[TokenId]) -> TokenSequence {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == DEL && out.last() == Some(&DEL) {
            continue;
        }
        out.push(id);
    }
    TokenSequence(out)
}

/// Replaces the tokens at `indices` with `[DEL]` and collapses adjacent
/// `[DEL]` runs. Indices outside the sequence are ignored.
pub fn apply_word_deletion(tokens: &[TokenId], indices: &[usize]) -> TokenSequence {
    let mut marked = tokens.to_vec();
    for &i in indices {
        if let Some(t) = marked.get_mut(i) {
            *t = DEL;
        }
    }
    collapse_deletions(&marked)
}

/// Replaces each span with a single `[DEL]`, then collapses adjacent ones.
pub fn apply_span_deletion(tokens: &[TokenId], spans: &[Span]) -> TokenSequence {
    let mut deleted = vec![false; tokens.len()];
    for span in spans {
        let end = span.end.min(tokens.len());
        for d in &mut deleted[span.start.min(end)..end] {
            *d = true;
        }
    }
    let marked: Vec<TokenId> = tokens
        .iter()
        .zip(&deleted)
        .map(|(&t, &d)| if d { DEL } else { t })
        .collect();
    collapse_deletions(&marked)
}

/// Swaps the contents of each span pair.
///
/// All pairs are applied at once: the sequence is cut into spans and the gaps
/// between them, and each span's slot receives its partner's tokens. For a
/// single pair this is the same as splicing both spans out and reinserting
/// each at the other's start offset in the residual sequence.
pub fn apply_reorder(tokens: &[TokenId], pairs: &[(Span, Span)]) -> Result<TokenSequence> {
    let mut slots: Vec<(Span, Span)> = Vec::with_capacity(pairs.len() * 2);
    for &(a, b) in pairs {
        for s in [a, b] {
            if s.is_empty() || s.end > tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "reorder span {}..{} invalid for length {}",
                    s.start,
                    s.end,
                    tokens.len()
                )));
            }
        }
        slots.push((a, b));
        slots.push((b, a));
    }
    slots.sort_by_key(|(slot, _)| slot.start);
    for w in slots.windows(2) {
        if w[0].0.end > w[1].0.start {
            return Err(Error::OverlappingSpans);
        }
    }

    let mut out = Vec::with_capacity(tokens.len());
    let mut cursor = 0;
    for (slot, filler) in slots {
        out.extend_from_slice(&tokens[cursor..slot.start]);
        out.extend_from_slice(&tokens[filler.start..filler.end]);
        cursor = slot.end;
    }
    out.extend_from_slice(&tokens[cursor..]);
    Ok(TokenSequence(out))
}

/// Replaces exactly the chosen positions; indices outside the sequence are
/// ignored.
pub fn apply_substitution(tokens: &[TokenId], choices: &BTreeMap<usize, TokenId>) -> TokenSequence {
    let mut out = tokens.to_vec();
    for (&i, &id) in choices {
        if let Some(t) = out.get_mut(i) {
            *t = id;
        }
    }
    TokenSequence(out)
}
