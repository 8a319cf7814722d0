//! Deterministic synthetic review corpora for benchmarks and tests.
//!
//! Spam and non-spam reviews draw tokens from overlapping vocabularies: a
//! large shared pool plus a smaller class-indicative pool per class, with a
//! fraction of cross-over draws. Behavioral signals are correlated with the
//! class: spam is shorter, rated at the extremes, rarely voted helpful, and
//! written by a small pool of prolific reviewers. A configurable fraction of
//! labels is flipped after generation.
//!
//! Record `i` is generated from its own random stream, so output is
//! independent of thread count.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Label, ReviewRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::textproc::StopWords;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_reviews: usize,
    pub spam_fraction: f64,
    /// Probability that a generated label is flipped.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_reviews: 20_000,
            spam_fraction: 0.4,
            label_noise: 0.03,
            seed: 7,
        }
    }
}

const SHARED_WORDS: usize = 1200;
const INDICATIVE_WORDS: usize = 160;
const SPAM_REVIEWERS: u64 = 400;
const PRODUCTS: u64 = 800;
/// 2012-01-01T00:00:00Z
const START_TIME: i64 = 1_325_376_000;
const SPAN_SECS: i64 = 36 * 30 * 86_400;

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

struct Lexicon {
    shared: Vec<String>,
    spam: Vec<String>,
    ham: Vec<String>,
    stop: Vec<String>,
}

impl Lexicon {
    fn new() -> Self {
        let stopwords = StopWords::english();
        let syllables: Vec<String> = ONSETS
            .iter()
            .flat_map(|o| NUCLEI.iter().map(move |n| format!("{o}{n}")))
            .collect();
        let s = syllables.len();
        let mut words = Vec::with_capacity(SHARED_WORDS + 2 * INDICATIVE_WORDS);
        let mut i = 0usize;
        while words.len() < SHARED_WORDS + 2 * INDICATIVE_WORDS {
            let w = format!(
                "{}{}{}",
                syllables[i % s],
                syllables[(i / s) % s],
                syllables[(i / (s * s) + i) % s]
            );
            i += 1;
            if !stopwords.contains(&w) {
                words.push(w);
            }
        }
        let ham = words.split_off(SHARED_WORDS + INDICATIVE_WORDS);
        let spam = words.split_off(SHARED_WORDS);
        let stop = [
            "the", "this", "is", "it", "and", "a", "of", "to", "was", "for", "i", "with",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        Lexicon {
            shared: words,
            spam,
            ham,
            stop,
        }
    }
}

/// Skewed index into a pool: low indices are drawn far more often.
fn skewed<'a>(r: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    let u: f64 = r.gen();
    &pool[((u * u) * pool.len() as f64) as usize]
}

fn sentence(r: &mut ChaCha8Rng, lex: &Lexicon, spam: bool, n_tokens: usize) -> String {
    let (own, other) = if spam {
        (&lex.spam, &lex.ham)
    } else {
        (&lex.ham, &lex.spam)
    };
    let mut words: Vec<&str> = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let u: f64 = r.gen();
        let w = if u < 0.25 {
            skewed(r, &lex.stop)
        } else if u < 0.43 {
            skewed(r, own)
        } else if u < 0.46 {
            skewed(r, other)
        } else {
            skewed(r, &lex.shared)
        };
        words.push(w);
    }
    let mut text = words.join(" ");
    text.push('.');
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text
}

fn generate_one(spec: &SynthSpec, lex: &Lexicon, index: usize) -> ReviewRecord {
    let mut r = rng::stream(spec.seed, &[index as u64]);
    let spam = r.gen_bool(spec.spam_fraction);
    let (text_len, summary_len) = if spam {
        (r.gen_range(8..=30), r.gen_range(1..=4))
    } else {
        (r.gen_range(18..=90), r.gen_range(2..=8))
    };
    let review_text = sentence(&mut r, lex, spam, text_len);
    let summary = sentence(&mut r, lex, spam, summary_len);
    let reviewer_id = if spam {
        format!("S{:05}", r.gen_range(0..SPAM_REVIEWERS))
    } else {
        format!("H{:07}", r.gen_range(0..(spec.n_reviews as u64 * 2).max(1)))
    };
    let rating = if spam {
        if r.gen_bool(0.7) {
            5
        } else {
            1
        }
    } else {
        r.gen_range(1..=5)
    };
    let total_votes: u64 = if spam { r.gen_range(0..=3) } else { r.gen_range(0..=30) };
    let helpful_votes = if total_votes == 0 {
        0
    } else if spam {
        r.gen_range(0..=total_votes / 2)
    } else {
        r.gen_range(total_votes / 3..=total_votes)
    };
    let unix_review_time = START_TIME + r.gen_range(0..SPAN_SECS);
    let flipped = r.gen_bool(spec.label_noise);
    let label = if spam != flipped { Label::Spam } else { Label::NonSpam };
    ReviewRecord {
        reviewer_id,
        product_id: format!("B{:06}", r.gen_range(0..PRODUCTS)),
        review_text,
        summary,
        rating,
        helpful_votes,
        total_votes,
        unix_review_time,
        label,
    }
}

/// Generates `spec.n_reviews` records; identical for identical specs.
pub fn generate(spec: &SynthSpec) -> Vec<ReviewRecord> {
    let lex = Lexicon::new();
    (0..spec.n_reviews)
        .into_par_iter()
        .map(|i| generate_one(spec, &lex, i))
        .collect()
}

/// Writes records as JSON lines in the ingestion schema.
pub fn write_jsonl(records: &[ReviewRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_line;

    fn small() -> SynthSpec {
        SynthSpec {
            n_reviews: 500,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small()), generate(&small()));
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(generate(&small()), generate(&other));
    }

    #[test]
    fn records_round_trip_through_the_parser() {
        for r in generate(&small()).iter().take(50) {
            assert_eq!(&parse_line(&r.to_json_line()).unwrap(), r);
        }
    }

    #[test]
    fn spam_fraction_is_roughly_respected() {
        let rs = generate(&SynthSpec {
            n_reviews: 4000,
            ..SynthSpec::default()
        });
        let spam = rs.iter().filter(|r| r.label.is_spam()).count() as f64 / rs.len() as f64;
        assert!((spam - 0.4).abs() < 0.04, "{spam}");
    }

    #[test]
    fn generated_words_avoid_stopwords() {
        let lex = Lexicon::new();
        let stop = StopWords::english();
        for w in lex.shared.iter().chain(&lex.spam).chain(&lex.ham) {
            assert!(!stop.contains(w));
        }
        let mut all: Vec<&String> = lex.shared.iter().chain(&lex.spam).chain(&lex.ham).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n, "pool words must be distinct");
    }
}
