use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{TokenId, Vocabulary};

/// Synonym table over vocabulary ids.
///
/// Loaded from a TSV file with lines `word<TAB>syn1,syn2,...`. Headwords and
/// synonyms are matched against the vocabulary; entries outside it are
/// dropped, as are headwords left without any in-vocabulary synonym.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    synonyms: BTreeMap<TokenId, Vec<TokenId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexiconCoverage {
    pub corpus_tokens: usize,
    pub covered_tokens: usize,
}

impl LexiconCoverage {
    pub fn fraction(&self) -> f64 {
        if self.corpus_tokens == 0 {
            0.0
        } else {
            self.covered_tokens as f64 / self.corpus_tokens as f64
        }
    }
}

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (TokenId, Vec<TokenId>)>) -> Self {
        let mut synonyms: BTreeMap<TokenId, Vec<TokenId>> = BTreeMap::new();
        for (head, syns) in pairs {
            let entry = synonyms.entry(head).or_default();
            for s in syns {
                if s != head && !entry.contains(&s) {
                    entry.push(s);
                }
            }
        }
        synonyms.retain(|_, v| !v.is_empty());
        Self { synonyms }
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (head, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                what: "lexicon",
                line: lineno + 1,
                reason: "expected word<TAB>synonyms".into(),
            })?;
            let Some(head_id) = vocab.id(head.trim()) else {
                continue;
            };
            let syns = rest
                .split(',')
                .filter_map(|s| vocab.id(s.trim()))
                .filter(|&id| !Vocabulary::is_special(id))
                .collect();
            if !Vocabulary::is_special(head_id) {
                pairs.push((head_id, syns));
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab)
    }

    pub fn synonyms(&self, id: TokenId) -> &[TokenId] {
        self.synonyms.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.synonyms.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }

    /// Fraction of corpus tokens having at least one synonym.
    pub fn coverage<'a>(&self, corpus: impl IntoIterator<Item = &'a [TokenId]>) -> LexiconCoverage {
        let mut cov = LexiconCoverage {
            corpus_tokens: 0,
            covered_tokens: 0,
        };
        for sentence in corpus {
            cov.corpus_tokens += sentence.len();
            cov.covered_tokens += sentence.iter().filter(|&&t| self.contains(t)).count();
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;

    #[test]
    fn parse_drops_unknown_entries() {
        let vocab = build_vocab(["big large huge small tiny cat"], 1, 100).unwrap();
        let lex = Lexicon::parse("big\tlarge,huge,enormous\nsmall\ttiny\nzebra\thorse\ncat\tfeline\n", &vocab)
            .unwrap();
        let id = |t| vocab.id(t).unwrap();
        assert_eq!(lex.synonyms(id("big")), [id("large"), id("huge")]);
        assert_eq!(lex.synonyms(id("small")), [id("tiny")]);
        assert!(!lex.contains(id("cat")));
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn parse_rejects_missing_tab() {
        let vocab = build_vocab(["a b"], 1, 100).unwrap();
        assert!(Lexicon::parse("a b\n", &vocab).is_err());
    }

    #[test]
    fn coverage_fraction() {
        let lex = Lexicon::from_pairs([(7, vec![8])]);
        let corpus: Vec<Vec<TokenId>> = vec![vec![7, 9, 7], vec![10]];
        let cov = lex.coverage(corpus.iter().map(Vec::as_slice));
        assert_eq!(cov.corpus_tokens, 4);
        assert_eq!(cov.covered_tokens, 2);
        assert!((cov.fraction() - 0.5).abs() < 1e-12);
    }
}
