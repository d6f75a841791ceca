//! Tokenization, vocabulary construction, id encoding and corpus ingestion.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const MASK: TokenId = 3;
pub const DEL: TokenId = 4;

/// Special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[DEL]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Splits text into lowercase word and punctuation tokens.
///
/// Whitespace separates tokens; every character that is neither alphanumeric
/// nor whitespace is emitted as a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Ordered token ids of one sentence. `[CLS]` is not included; it is added
/// when batches are assembled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list. The list must start
    /// with the five special tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL {
            return Err(Error::InvalidVocabulary(format!(
                "expected at least {NUM_SPECIAL} entries, found {}",
                tokens.len()
            )));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::InvalidVocabulary(format!(
                    "id {i} must be {special}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains(['\n', '\r']) {
                return Err(Error::InvalidVocabulary(format!("bad token at id {i}: {tok:?}")));
            }
            if token_to_id.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> TokenSequence {
        TokenSequence(
            tokens
                .iter()
                .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn encode_text(&self, text: &str) -> TokenSequence {
        self.encode(&tokenize(text))
    }

    /// Maps ids back to token strings; out-of-range ids decode as `[UNK]`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]).to_owned())
            .collect()
    }

    /// Vocabulary file: one token per line, line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for tok in &self.id_to_token {
            s.push_str(tok);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

/// Counts tokens over `corpus` and keeps the most frequent ones with at least
/// `min_freq` occurrences, so that the vocabulary (specials included) holds at
/// most `max_size` entries. Equal counts are ordered lexicographically.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_freq < 1 {
        return Err(Error::InvalidArgument("min_freq must be >= 1".into()));
    }
    if max_size <= NUM_SPECIAL {
        return Err(Error::InvalidArgument(format!(
            "max_size must exceed {NUM_SPECIAL}"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut sentences = 0usize;
    for sentence in corpus {
        sentences += 1;
        for tok in tokenize(sentence.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if sentences == 0 || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&tok.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIAL);

    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Sentence length bounds applied at ingestion (in tokens, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthFilter {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self {
            min_len: 4,
            max_len: 64,
        }
    }
}

impl LengthFilter {
    pub fn accepts(&self, n_tokens: usize) -> bool {
        n_tokens >= self.min_len && n_tokens <= self.max_len && n_tokens >= 1
    }
}

/// Reads a corpus file (one sentence per line) and returns the lines whose
/// token count passes `filter`. Kept lines are returned verbatim.
pub fn read_corpus(path: &Path, filter: LengthFilter) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if filter.accepts(tokenize(&line).len()) {
            kept.push(line);
        }
    }
    Ok(kept)
}

/// Filters in-memory sentences the same way [`read_corpus`] does.
pub fn filter_sentences<S: AsRef<str>>(sentences: &[S], filter: LengthFilter) -> Vec<String> {
    sentences
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| filter.accepts(tokenize(s).len()))
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sat."), ["the", "cat", "sat", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't  stop"), ["don", "'", "t", "stop"]);
        assert_eq!(tokenize("  Hello,\tWORLD!\n"), ["hello", ",", "world", "!"]);
        assert_eq!(tokenize("Ünïcode café"), ["ünïcode", "café"]);
    }

    #[test]
    fn vocab_counts_and_threshold() {
        let v = build_vocab(["a b", "a"], 1, 10).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.tokens()[5..], ["a", "b"]);
        let v = build_vocab(["a b", "a"], 2, 10).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn vocab_tie_at_cutoff_keeps_smaller_token() {
        let v = build_vocab(["x y z", "x y z", "q", "x"], 1, 7).unwrap();
        // x:3, then y and z tie at 2; only one slot remains.
        assert_eq!(v.tokens()[5..], ["x", "y"]);
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(
            build_vocab(Vec::<String>::new(), 1, 10),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(build_vocab([""], 1, 10), Err(Error::EmptyCorpus)));
        assert!(build_vocab(["a"], 0, 10).is_err());
        assert!(build_vocab(["a"], 1, 5).is_err());
    }

    #[test]
    fn specials_are_fixed() {
        let v = build_vocab(["hello world"], 1, 100).unwrap();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as TokenId));
        }
        assert_eq!(v.id("[DEL]"), Some(DEL));
    }

    #[test]
    fn encode_unknown_and_round_trip() {
        let v = build_vocab(["a b c"], 1, 100).unwrap();
        assert_eq!(v.encode(&["a"]).0, vec![v.id("a").unwrap()]);
        assert_eq!(v.encode(&["zzz-unseen"]).0, vec![UNK]);
        let toks = ["c", "a", "b", "a"];
        assert_eq!(v.decode(&v.encode(&toks)), toks);
    }

    #[test]
    fn file_round_trip_and_validation() {
        let v = build_vocab(["b a", "c"], 1, 100).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("[PAD]\n[UNK]\n[CLS]\n[MASK]\n[DEL]\n"));
        let back = Vocabulary::from_tokens(text.lines().map(str::to_owned).collect()).unwrap();
        assert_eq!(back, v);

        let mut bad: Vec<String> = text.lines().map(str::to_owned).collect();
        bad.push("a".into());
        assert!(Vocabulary::from_tokens(bad).is_err());
        let swapped = vec!["[UNK]", "[PAD]", "[CLS]", "[MASK]", "[DEL]"]
            .into_iter()
            .map(String::from)
            .collect();
        assert!(Vocabulary::from_tokens(swapped).is_err());
    }

    #[test]
    fn ingestion_filter() {
        let lines = ["one two three", "one two three four", "a b c d e f"];
        let f = LengthFilter {
            min_len: 4,
            max_len: 5,
        };
        assert_eq!(filter_sentences(&lines, f), ["one two three four"]);
    }
}
