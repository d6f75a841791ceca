//! Frozen-feature evaluation: sentence embeddings, rank correlations against
//! gold similarity scores, and in-batch retrieval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::batching::PaddedBatch;
use crate::encoder::{pool, Mode, ModelParameters, Pooling};
use crate::error::{Error, Result};
use crate::objectives::{cosine_sim, Pairing};
use crate::scalar::{dot, norm, Scalar};
use crate::text::{TokenId, Vocabulary};

/// Sentences embedded per encoder call.
const EMBED_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

/// Parses `sentence_a<TAB>sentence_b<TAB>gold` lines; blank lines are skipped.
pub fn parse_eval_pairs(text: &str) -> Result<Vec<EvalPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            what: "eval pairs",
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", cols.len())));
        }
        let gold: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("gold score {:?} is not a number", cols[2])))?;
        if !gold.is_finite() {
            return Err(err("gold score must be finite".into()));
        }
        out.push(EvalPair {
            sentence_a: cols[0].to_string(),
            sentence_b: cols[1].to_string(),
            gold,
        });
    }
    Ok(out)
}

pub fn read_eval_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_eval_pairs(&text)
}

/// Eval-mode encoder outputs pooled to one `hidden`-wide vector per
/// sentence. The projection head is not applied. Sentences longer than the
/// encoder accepts are truncated.
pub fn embed<F: Scalar>(params: &ModelParameters<F>, sentences: &[Vec<TokenId>], pooling: Pooling) -> Result<Vec<Vec<F>>> {
    let limit = params.config.max_positions.saturating_sub(1);
    let h = params.config.hidden;
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(EMBED_CHUNK) {
        let rows: Vec<&[TokenId]> = chunk.iter().map(|s| &s[..s.len().min(limit)]).collect();
        let batch = PaddedBatch::from_sequences(&rows);
        let (hidden, _) = params.encode(&batch, Mode::Eval)?;
        let pooled = pool(&hidden, pooling);
        out.extend(pooled.chunks_exact(h).map(<[F]>::to_vec));
    }
    Ok(out)
}

/// Tokenises and embeds raw text.
pub fn embed_texts<F: Scalar>(
    params: &ModelParameters<F>,
    vocab: &Vocabulary,
    texts: &[impl AsRef<str>],
    pooling: Pooling,
) -> Result<Vec<Vec<F>>> {
    let ids: Vec<Vec<TokenId>> = texts.iter().map(|t| vocab.encode_text(t.as_ref()).0).collect();
    embed(params, &ids, pooling)
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsResult {
    pub pearson: f64,
    pub spearman: f64,
    /// Cosine similarity per pair, in input order.
    pub predicted: Vec<f64>,
    pub gold: Vec<f64>,
    /// Number of encoder inputs actually embedded.
    pub distinct_sentences: usize,
}

/// Correlates cosine similarity of pair embeddings with gold scores. Every
/// distinct sentence is embedded once.
pub fn sts_eval<F: Scalar>(
    params: &ModelParameters<F>,
    vocab: &Vocabulary,
    pairs: &[EvalPair],
    pooling: Pooling,
) -> Result<StsResult> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut texts: Vec<&str> = Vec::new();
    for p in pairs {
        for s in [p.sentence_a.as_str(), p.sentence_b.as_str()] {
            index.entry(s).or_insert_with(|| {
                texts.push(s);
                texts.len() - 1
            });
        }
    }
    let vectors = embed_texts(params, vocab, &texts, pooling)?;
    let predicted = pairs
        .iter()
        .map(|p| {
            let a = &vectors[index[p.sentence_a.as_str()]];
            let b = &vectors[index[p.sentence_b.as_str()]];
            cosine_sim(a, b).map(|c| c.as_f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    Ok(StsResult {
        pearson: pearson(&predicted, &gold)?,
        spearman: spearman(&predicted, &gold)?,
        predicted,
        gold,
        distinct_sentences: texts.len(),
    })
}

impl StsResult {
    /// Plain-text summary.
    pub fn report(&self, pooling: Pooling) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairs: {}", self.predicted.len());
        let _ = writeln!(s, "pooling: {pooling}");
        let _ = writeln!(s, "pearson: {:.6}", self.pearson);
        let _ = writeln!(s, "spearman: {:.6}", self.spearman);
        s
    }

    /// `index,gold,predicted` rows with a header.
    pub fn per_pair_csv(&self) -> String {
        let mut s = String::from("index,gold,predicted\n");
        for (i, (g, p)) in self.gold.iter().zip(&self.predicted).enumerate() {
            let _ = writeln!(s, "{i},{g},{p}");
        }
        s
    }
}

fn unit_rows<F: Scalar>(z: &[F], dim: usize) -> Result<Vec<F>> {
    if dim == 0 || !z.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!("{} values in rows of {dim}", z.len())));
    }
    let mut u = z.to_vec();
    for row in u.chunks_exact_mut(dim) {
        let n = norm(row);
        if n == F::zero() {
            return Err(Error::ZeroNorm);
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(u)
}

/// Fraction of views whose most cosine-similar other view is their positive
/// partner. Ties go to the lowest index.
pub fn retrieval_accuracy<F: Scalar>(z: &[F], dim: usize, pairing: &Pairing) -> Result<f64> {
    let u = unit_rows(z, dim)?;
    let n = u.len() / dim;
    if n != pairing.len() || n < 4 {
        return Err(Error::InvalidArgument(format!(
            "retrieval needs at least 4 views matching the pairing, got {n}"
        )));
    }
    let mut hits = 0usize;
    for i in 0..n {
        let ui = &u[i * dim..(i + 1) * dim];
        let mut best = (usize::MAX, F::neg_infinity());
        for k in (0..n).filter(|&k| k != i) {
            let s = dot(ui, &u[k * dim..(k + 1) * dim]);
            if s > best.1 {
                best = (k, s);
            }
        }
        if best.0 == pairing.partner(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Mean cosine over positive pairs and over all other ordered pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSeparation {
    pub positive: f64,
    pub negative: f64,
}

impl CosineSeparation {
    pub fn gap(&self) -> f64 {
        self.positive - self.negative
    }
}

pub fn cosine_separation<F: Scalar>(z: &[F], dim: usize, pairing: &Pairing) -> Result<CosineSeparation> {
    let u = unit_rows(z, dim)?;
    let n = u.len() / dim;
    if n != pairing.len() {
        return Err(Error::MalformedPairing(format!("{n} views for a pairing of {}", pairing.len())));
    }
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for k in (0..n).filter(|&k| k != i) {
            let s = dot(&u[i * dim..(i + 1) * dim], &u[k * dim..(k + 1) * dim]).as_f64();
            if pairing.is_positive(i, k) {
                pos += s;
                npos += 1;
            } else {
                neg += s;
                nneg += 1;
            }
        }
    }
    Ok(CosineSeparation {
        positive: pos / npos.max(1) as f64,
        negative: neg / nneg.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // 1 - 6 * 2 / (3 * 8)
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0];
        assert!((pearson(&xs, &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &[6.0, 5.0, 4.0]).unwrap() + 1.0).abs() < 1e-15);
        // Deviations (-1, 0, 1) and (-4/3, -1/3, 5/3): 3 / sqrt(2 * 14/3).
        let closed = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        assert!((pearson(&xs, &[1.0, 2.0, 4.0]).unwrap() - closed).abs() < 1e-15);
        assert!((closed - 0.981_980_506_061_965_7).abs() < 1e-15);
        assert!(matches!(pearson(&[3.0, 3.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn correlations_respect_monotone_and_affine_transforms() {
        let mut rng = CounterRng::new(3);
        let xs: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 0.5 * rng.normal()).collect();
        let s = spearman(&xs, &ys).unwrap();
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
        assert!((spearman(&cubed, &ys).unwrap() - s).abs() < 1e-12);
        let p = pearson(&xs, &ys).unwrap();
        let affine: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((pearson(&affine, &ys).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn retrieval_examples() {
        // Pairs identical, pairs mutually orthogonal.
        let z = [1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(retrieval_accuracy(&z, 2, &Pairing::interleaved(2)).unwrap(), 1.0);
        // All identical: views 0 and 1 find each other, the rest find view 0.
        for n in 2..6 {
            let same = vec![0.3f64; 2 * n * 3];
            let acc = retrieval_accuracy(&same, 3, &Pairing::interleaved(n)).unwrap();
            assert_eq!(acc, 2.0 / (2 * n) as f64);
        }
        assert!(retrieval_accuracy(&[1.0f64, 0.0, 1.0, 0.0], 2, &Pairing::interleaved(1)).is_err());
    }

    #[test]
    fn retrieval_is_scale_invariant() {
        let mut rng = CounterRng::new(9);
        let mut z: Vec<f64> = (0..8 * 4).map(|_| rng.normal()).collect();
        let p = Pairing::interleaved(4);
        let a = retrieval_accuracy(&z, 4, &p).unwrap();
        for (r, row) in z.chunks_mut(4).enumerate() {
            row.iter_mut().for_each(|v| *v *= 1.0 + r as f64);
        }
        assert_eq!(retrieval_accuracy(&z, 4, &p).unwrap(), a);
    }

    #[test]
    fn random_vectors_retrieve_at_chance() {
        // N = 8: chance is 1/15. A trial's accuracy has variance at most
        // p (1 - p), so the mean over 1000 trials has standard deviation at
        // most sqrt(p (1 - p) / 1000).
        let n = 8;
        let dim = 16;
        let trials = 1000;
        let p = Pairing::interleaved(n);
        let mut rng = CounterRng::new(2024);
        let mut total = 0.0;
        for _ in 0..trials {
            let z: Vec<f64> = (0..2 * n * dim).map(|_| rng.normal()).collect();
            total += retrieval_accuracy(&z, dim, &p).unwrap();
        }
        let mean = total / trials as f64;
        let chance = 1.0 / (2 * n - 1) as f64;
        let sigma = (chance * (1.0 - chance) / trials as f64).sqrt();
        assert!((mean - chance).abs() < 3.0 * sigma, "{mean} vs {chance} ± {}", 3.0 * sigma);
    }

    #[test]
    fn separation_of_orthogonal_pairs() {
        let z = [1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let s = cosine_separation(&z, 2, &Pairing::interleaved(2)).unwrap();
        assert_eq!(s.positive, 1.0);
        assert_eq!(s.negative, 0.0);
        assert_eq!(s.gap(), 1.0);
    }

    #[test]
    fn eval_pairs_parse() {
        let p = parse_eval_pairs("a b\tc d\t4.5\n\nx\ty\t0\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].gold, 4.5);
        assert_eq!(p[1].sentence_b, "y");
        assert!(matches!(parse_eval_pairs("a\tb\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_eval_pairs("a\tb\tc\td\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_eval_pairs("a\tb\tnan\n"), Err(Error::Parse { .. })));
    }
}
