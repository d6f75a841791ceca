//! Templated synthetic sentences and paraphrase pairs.
//!
//! A sentence is built from a [`Frame`] (who did what to whom, where and
//! when) rendered in one of three surface forms: active, passive, or active
//! with the place phrase fronted. Two renderings of the same frame are
//! paraphrases; renderings of independently drawn frames are unrelated.

use std::collections::BTreeSet;

use crate::rng::{mix, CounterRng};

const ADJECTIVES: &[&str] = &[
    "old", "young", "tall", "quiet", "busy", "clever", "tired", "happy", "brave", "lazy", "small", "famous",
];

const NOUNS: &[&str] = &[
    "cat", "dog", "teacher", "farmer", "child", "doctor", "pilot", "artist", "baker", "singer", "student", "driver",
    "nurse", "sailor", "writer", "king", "queen", "horse", "bird", "lawyer",
];

/// (past tense, past participle)
const VERBS: &[(&str, &str)] = &[
    ("chased", "chased"),
    ("saw", "seen"),
    ("helped", "helped"),
    ("followed", "followed"),
    ("called", "called"),
    ("visited", "visited"),
    ("painted", "painted"),
    ("met", "met"),
    ("thanked", "thanked"),
    ("watched", "watched"),
    ("found", "found"),
    ("greeted", "greeted"),
    ("ignored", "ignored"),
    ("pushed", "pushed"),
    ("taught", "taught"),
];

const PLACES: &[&str] = &[
    "in the park",
    "at the market",
    "near the river",
    "in the kitchen",
    "at the station",
    "on the bridge",
    "in the garden",
    "at the school",
    "by the lake",
    "in the city",
];

const TIMES: &[&str] = &[
    "yesterday",
    "last night",
    "this morning",
    "on monday",
    "after lunch",
    "before dawn",
    "every day",
    "at noon",
];

/// Content of one synthetic sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame {
    pub adjective: usize,
    pub agent: usize,
    pub verb: usize,
    pub patient: usize,
    pub place: usize,
    pub time: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceForm {
    Active,
    Passive,
    FrontedPlace,
}

impl SurfaceForm {
    pub const ALL: [SurfaceForm; 3] = [SurfaceForm::Active, SurfaceForm::Passive, SurfaceForm::FrontedPlace];
}

impl Frame {
    pub fn sample(rng: &mut CounterRng) -> Self {
        let agent = rng.index(NOUNS.len());
        let mut patient = rng.index(NOUNS.len() - 1);
        if patient >= agent {
            patient += 1;
        }
        Self {
            adjective: rng.index(ADJECTIVES.len()),
            agent,
            verb: rng.index(VERBS.len()),
            patient,
            place: rng.index(PLACES.len()),
            time: rng.index(TIMES.len()),
        }
    }

    pub fn render(&self, form: SurfaceForm) -> String {
        let agent = format!("the {} {}", ADJECTIVES[self.adjective], NOUNS[self.agent]);
        let patient = format!("the {}", NOUNS[self.patient]);
        let (past, participle) = VERBS[self.verb];
        let place = PLACES[self.place];
        let time = TIMES[self.time];
        match form {
            SurfaceForm::Active => format!("{agent} {past} {patient} {place} {time} ."),
            SurfaceForm::Passive => format!("{patient} was {participle} by {agent} {place} {time} ."),
            SurfaceForm::FrontedPlace => format!("{place} , {agent} {past} {patient} {time} ."),
        }
    }
}

/// `n` distinct frames.
fn distinct_frames(n: usize, rng: &mut CounterRng, exclude: &BTreeSet<Frame>) -> Vec<Frame> {
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let f = Frame::sample(rng);
        if seen.insert(f) {
            out.push(f);
        }
    }
    out
}

/// `n` distinct sentences with distinct frames, surface forms drawn uniformly.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    generate_corpus_frames(n, seed, &BTreeSet::new())
        .into_iter()
        .map(|(_, s)| s)
        .collect()
}

/// Like [`generate_corpus`] but also returns the frames and avoids the
/// frames in `exclude`, for building held-out sets.
pub fn generate_corpus_frames(n: usize, seed: u64, exclude: &BTreeSet<Frame>) -> Vec<(Frame, String)> {
    let mut rng = CounterRng::new(mix(seed, &[0x5E17]));
    distinct_frames(n, &mut rng, exclude)
        .into_iter()
        .map(|f| {
            let form = SurfaceForm::ALL[rng.index(3)];
            (f, f.render(form))
        })
        .collect()
}

/// Labelled sentence pair; `gold` is 1 for paraphrases and 0 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub a: String,
    pub b: String,
    pub gold: f64,
}

/// `n` pairs, alternating paraphrase (gold 1) and unrelated (gold 0).
/// Paraphrases render one frame in two different surface forms; unrelated
/// pairs render two different frames, also in two different forms.
pub fn generate_paraphrase_pairs(n: usize, seed: u64) -> Vec<SyntheticPair> {
    let mut rng = CounterRng::new(mix(seed, &[0x9A1F]));
    let frames = distinct_frames(n + n / 2 + 1, &mut rng, &BTreeSet::new());
    let mut next = frames.into_iter();
    (0..n)
        .map(|i| {
            let fa = SurfaceForm::ALL[rng.index(3)];
            let fb = SurfaceForm::ALL[(fa as usize + 1 + rng.index(2)) % 3];
            let first = next.next().expect("enough frames");
            if i % 2 == 0 {
                SyntheticPair {
                    a: first.render(fa),
                    b: first.render(fb),
                    gold: 1.0,
                }
            } else {
                let second = next.next().expect("enough frames");
                SyntheticPair {
                    a: first.render(fa),
                    b: second.render(fb),
                    gold: 0.0,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn renders_three_forms_with_same_content_words() {
        let f = Frame {
            adjective: 0,
            agent: 0,
            verb: 0,
            patient: 1,
            place: 0,
            time: 0,
        };
        assert_eq!(f.render(SurfaceForm::Active), "the old cat chased the dog in the park yesterday .");
        assert_eq!(f.render(SurfaceForm::Passive), "the dog was chased by the old cat in the park yesterday .");
        assert_eq!(f.render(SurfaceForm::FrontedPlace), "in the park , the old cat chased the dog yesterday .");
    }

    #[test]
    fn corpus_is_distinct_deterministic_and_in_length_range() {
        let c = generate_corpus(256, 1);
        assert_eq!(c, generate_corpus(256, 1));
        assert_ne!(c, generate_corpus(256, 2));
        let set: BTreeSet<&String> = c.iter().collect();
        assert_eq!(set.len(), 256);
        for s in &c {
            let n = tokenize(s).len();
            assert!((4..=64).contains(&n), "{s}");
        }
    }

    #[test]
    fn held_out_frames_are_disjoint() {
        let train = generate_corpus_frames(100, 1, &BTreeSet::new());
        let seen: BTreeSet<Frame> = train.iter().map(|(f, _)| *f).collect();
        let held = generate_corpus_frames(50, 2, &seen);
        assert!(held.iter().all(|(f, _)| !seen.contains(f)));
    }

    #[test]
    fn pairs_alternate_labels() {
        let p = generate_paraphrase_pairs(10, 3);
        assert_eq!(p.len(), 10);
        for (i, pair) in p.iter().enumerate() {
            assert_eq!(pair.gold, if i % 2 == 0 { 1.0 } else { 0.0 });
            assert_ne!(pair.a, pair.b);
            if pair.gold == 1.0 {
                let mut a = tokenize(&pair.a);
                let mut b = tokenize(&pair.b);
                a.retain(|w| !matches!(w.as_str(), "was" | "by" | ","));
                b.retain(|w| !matches!(w.as_str(), "was" | "by" | ","));
                a.sort();
                b.sort();
                // Same content words up to the verb form.
                assert_eq!(a.len(), b.len());
            }
        }
    }
}
