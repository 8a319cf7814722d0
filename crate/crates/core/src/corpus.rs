//! Review corpus ingestion: JSON-lines parsing, cleaning and train/test splitting.
//!
//! Input records use the field names of the public Amazon review dumps
//! (`reviewerID`, `asin`, `reviewText`, `summary`, `overall`, `helpful`,
//! `unixReviewTime`, `class`). Unknown fields are ignored, which is how the
//! corpus drops columns the pipeline has no use for.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Source label of a review. The dataset encodes spam as `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Spam = 0,
    NonSpam = 1,
}

impl Label {
    pub fn is_spam(self) -> bool {
        self == Label::Spam
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Spam),
            1 => Ok(Label::NonSpam),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

/// One validated review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub reviewer_id: String,
    pub product_id: String,
    pub review_text: String,
    pub summary: String,
    pub rating: u8,
    pub helpful_votes: u64,
    pub total_votes: u64,
    pub unix_review_time: i64,
    pub label: Label,
}

/// Why a line could not be turned into a [`ReviewRecord`].
#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    NotUtf8,
    Json(String),
    /// Required field absent, JSON `null`, or an empty identifier.
    MissingField(&'static str),
    RatingOutOfRange(f64),
    HelpfulShape(usize),
    HelpfulExceedsTotal {
        helpful: u64,
        total: u64,
    },
    InvalidLabel(i64),
    TimestampOutOfRange(i64),
}

impl ParseError {
    /// Missing or null values are counted as nulls rather than malformed lines.
    pub fn is_null(&self) -> bool {
        matches!(self, ParseError::MissingField(_))
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::NotUtf8 => write!(f, "line is not valid UTF-8"),
            ParseError::Json(msg) => write!(f, "malformed JSON: {msg}"),
            ParseError::MissingField(name) => write!(f, "missing required field `{name}`"),
            ParseError::RatingOutOfRange(r) => write!(f, "rating {r} is not an integer in 1..=5"),
            ParseError::HelpfulShape(n) => {
                write!(f, "`helpful` must have 2 elements, found {n}")
            }
            ParseError::HelpfulExceedsTotal { helpful, total } => {
                write!(f, "helpful votes {helpful} exceed total votes {total}")
            }
            ParseError::InvalidLabel(v) => write!(f, "class must be 0 or 1, got {v}"),
            ParseError::TimestampOutOfRange(t) => write!(f, "unixReviewTime {t} is out of range"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Deserialize)]
struct RawReview {
    #[serde(rename = "reviewerID")]
    reviewer_id: Option<String>,
    asin: Option<String>,
    #[serde(rename = "reviewText")]
    review_text: Option<String>,
    summary: Option<String>,
    overall: Option<f64>,
    helpful: Option<Vec<u64>>,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: Option<i64>,
    class: Option<i64>,
}

#[derive(Serialize)]
struct RawReviewOut<'a> {
    #[serde(rename = "reviewerID")]
    reviewer_id: &'a str,
    asin: &'a str,
    #[serde(rename = "reviewText")]
    review_text: &'a str,
    summary: &'a str,
    overall: u8,
    helpful: [u64; 2],
    #[serde(rename = "unixReviewTime")]
    unix_review_time: i64,
    class: u8,
}

fn required<T>(v: Option<T>, name: &'static str) -> Result<T, ParseError> {
    v.ok_or(ParseError::MissingField(name))
}

fn non_empty(v: Option<String>, name: &'static str) -> Result<String, ParseError> {
    match v {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(ParseError::MissingField(name)),
    }
}

/// Parses one JSON-lines object into a validated record.
pub fn parse_line(line: &str) -> Result<ReviewRecord, ParseError> {
    let raw: RawReview = serde_json::from_str(line).map_err(|e| ParseError::Json(e.to_string()))?;

    let reviewer_id = non_empty(raw.reviewer_id, "reviewerID")?;
    let product_id = non_empty(raw.asin, "asin")?;
    let review_text = required(raw.review_text, "reviewText")?;
    let summary = required(raw.summary, "summary")?;
    let overall = required(raw.overall, "overall")?;
    let helpful = required(raw.helpful, "helpful")?;
    let unix_review_time = required(raw.unix_review_time, "unixReviewTime")?;
    let class = required(raw.class, "class")?;

    if overall.fract() != 0.0 || !(1.0..=5.0).contains(&overall) {
        return Err(ParseError::RatingOutOfRange(overall));
    }
    let [helpful_votes, total_votes] =
        <[u64; 2]>::try_from(helpful.as_slice()).map_err(|_| ParseError::HelpfulShape(helpful.len()))?;
    if helpful_votes > total_votes {
        return Err(ParseError::HelpfulExceedsTotal {
            helpful: helpful_votes,
            total: total_votes,
        });
    }
    if chrono::DateTime::from_timestamp(unix_review_time, 0).is_none() {
        return Err(ParseError::TimestampOutOfRange(unix_review_time));
    }
    let label = match class {
        0 => Label::Spam,
        1 => Label::NonSpam,
        other => return Err(ParseError::InvalidLabel(other)),
    };

    Ok(ReviewRecord {
        reviewer_id,
        product_id,
        review_text,
        summary,
        rating: overall as u8,
        helpful_votes,
        total_votes,
        unix_review_time,
        label,
    })
}

impl ReviewRecord {
    /// Serializes back to the input schema, with a fixed field order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RawReviewOut {
            reviewer_id: &self.reviewer_id,
            asin: &self.product_id,
            review_text: &self.review_text,
            summary: &self.summary,
            overall: self.rating,
            helpful: [self.helpful_votes, self.total_votes],
            unix_review_time: self.unix_review_time,
            class: self.label.code(),
        })
        .expect("record serialization cannot fail")
    }
}

/// Line accounting for ingestion and cleaning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_read: u64,
    pub kept: u64,
    pub dropped_null: u64,
    pub dropped_duplicate: u64,
    pub dropped_malformed: u64,
}

impl CorpusStats {
    pub fn is_balanced(&self) -> bool {
        self.total_read == self.kept + self.dropped_null + self.dropped_duplicate + self.dropped_malformed
    }

    /// Chains a later stage whose input was this stage's kept records.
    pub fn then(self, next: CorpusStats) -> CorpusStats {
        debug_assert_eq!(self.kept, next.total_read);
        CorpusStats {
            total_read: self.total_read,
            kept: next.kept,
            dropped_null: self.dropped_null + next.dropped_null,
            dropped_duplicate: self.dropped_duplicate + next.dropped_duplicate,
            dropped_malformed: self.dropped_malformed + next.dropped_malformed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    #[default]
    Skip,
    Abort,
}

impl std::str::FromStr for ErrorPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "skip" => Ok(ErrorPolicy::Skip),
            "abort" => Ok(ErrorPolicy::Abort),
            other => Err(format!("unknown error policy `{other}` (expected skip or abort)")),
        }
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub error: ParseError,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub records: Vec<ReviewRecord>,
    pub stats: CorpusStats,
    /// The first [`MAX_REPORTED_REJECTIONS`] rejected lines, in file order.
    pub rejections: Vec<Rejection>,
}

pub const MAX_REPORTED_REJECTIONS: usize = 1000;

const CHUNK_LINES: usize = 8192;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Loads a JSON-lines corpus, transparently decompressing gzip input.
pub fn load_corpus(path: &Path, policy: ErrorPolicy) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let gzipped = reader
        .fill_buf()
        .map(|buf| buf.starts_with(&GZIP_MAGIC))
        .map_err(|e| Error::io(path, e))?;
    let result = if gzipped {
        load_reader(BufReader::with_capacity(1 << 20, MultiGzDecoder::new(reader)), policy)
    } else {
        load_reader(reader, policy)
    };
    result.map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Loads records from any buffered reader of newline-delimited JSON.
///
/// Lines are parsed in parallel chunks of bounded size; output order is file order.
pub fn load_reader<R: BufRead>(mut reader: R, policy: ErrorPolicy) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus {
        records: Vec::new(),
        stats: CorpusStats::default(),
        rejections: Vec::new(),
    };
    let mut line_no: u64 = 0;
    let mut chunk: Vec<Vec<u8>> = Vec::with_capacity(CHUNK_LINES);
    loop {
        chunk.clear();
        while chunk.len() < CHUNK_LINES {
            let mut buf = Vec::new();
            let n = reader
                .read_until(b'\n', &mut buf)
                .map_err(|e| Error::io("<input>", e))?;
            if n == 0 {
                break;
            }
            while matches!(buf.last(), Some(b'\n' | b'\r')) {
                buf.pop();
            }
            chunk.push(buf);
        }
        if chunk.is_empty() {
            break;
        }
        let parsed: Vec<Result<ReviewRecord, ParseError>> = chunk
            .par_iter()
            .map(|bytes| {
                std::str::from_utf8(bytes)
                    .map_err(|_| ParseError::NotUtf8)
                    .and_then(parse_line)
            })
            .collect();
        for result in parsed {
            line_no += 1;
            out.stats.total_read += 1;
            match result {
                Ok(record) => {
                    out.stats.kept += 1;
                    out.records.push(record);
                }
                Err(error) => {
                    if policy == ErrorPolicy::Abort {
                        return Err(Error::Parse {
                            line: line_no,
                            kind: error,
                        });
                    }
                    if error.is_null() {
                        out.stats.dropped_null += 1;
                    } else {
                        out.stats.dropped_malformed += 1;
                    }
                    if out.rejections.len() < MAX_REPORTED_REJECTIONS {
                        out.rejections.push(Rejection { line: line_no, error });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Drops empty-text records and exact duplicates, keeping first occurrences.
///
/// Two records are duplicates when reviewer, product, timestamp and review
/// text all match; other fields (rating, votes, label) are not compared.
pub fn clean(records: Vec<ReviewRecord>) -> (Vec<ReviewRecord>, CorpusStats) {
    let mut stats = CorpusStats {
        total_read: records.len() as u64,
        ..CorpusStats::default()
    };
    let keep: Vec<bool> = {
        let mut seen: HashSet<(&str, &str, i64, &str)> = HashSet::with_capacity(records.len());
        records
            .iter()
            .map(|r| {
                if r.review_text.trim().is_empty() {
                    stats.dropped_null += 1;
                    false
                } else if !seen.insert((&r.reviewer_id, &r.product_id, r.unix_review_time, &r.review_text)) {
                    stats.dropped_duplicate += 1;
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    let kept: Vec<ReviewRecord> = records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    stats.kept = kept.len() as u64;
    (kept, stats)
}

/// Train/test partitioning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )))
        }
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Deterministically partitions records into train and test sets.
///
/// Both partitions keep the input order. In stratified mode each class is
/// shuffled and cut separately, so per-class counts are within one record of
/// the exact proportion.
pub fn split(records: Vec<ReviewRecord>, spec: &SplitSpec) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>)> {
    spec.validate()?;
    let mut in_train = vec![false; records.len()];
    let groups: Vec<(u64, Vec<usize>)> = if spec.stratified {
        [Label::Spam, Label::NonSpam]
            .into_iter()
            .map(|label| {
                let members: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
                if members.len() < 2 {
                    return Err(Error::ClassTooSmall {
                        label: label.code(),
                        count: members.len(),
                    });
                }
                Ok((label.code() as u64, members))
            })
            .collect::<Result<_>>()?
    } else {
        if records.len() < 2 {
            return Err(Error::EmptyInput("split needs at least 2 records"));
        }
        vec![(u64::MAX, (0..records.len()).collect())]
    };

    for (key, mut members) in groups {
        let take = train_count(members.len(), spec.train_fraction);
        members.shuffle(&mut rng::stream(spec.seed, &[key]));
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }

    let (train, test): (Vec<_>, Vec<_>) = records.into_iter().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(r, _)| r).collect(),
        test.into_iter().map(|(r, _)| r).collect(),
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    const TABLE_ONE: &str = r#"{"reviewerID":"A1","asin":"B001","reviewText":"This phone case is great.","summary":"great","overall":5,"helpful":[3,5],"unixReviewTime":1385856000,"class":1}"#;

    pub(crate) fn record(reviewer: &str, text: &str, time: i64, label: Label) -> ReviewRecord {
        ReviewRecord {
            reviewer_id: reviewer.into(),
            product_id: "B001".into(),
            review_text: text.into(),
            summary: String::new(),
            rating: 5,
            helpful_votes: 0,
            total_votes: 0,
            unix_review_time: time,
            label,
        }
    }

    #[test]
    fn parses_complete_line() {
        let r = parse_line(TABLE_ONE).unwrap();
        assert_eq!(r.reviewer_id, "A1");
        assert_eq!(r.product_id, "B001");
        assert_eq!(r.review_text, "This phone case is great.");
        assert_eq!(r.rating, 5);
        assert_eq!((r.helpful_votes, r.total_votes), (3, 5));
        assert_eq!(r.unix_review_time, 1385856000);
        assert_eq!(r.label, Label::NonSpam);
    }

    #[test]
    fn ignores_unknown_and_optional_fields() {
        let line = TABLE_ONE.replace("\"asin\"", "\"reviewerName\":\"Jo\",\"extra\":[1],\"asin\"");
        assert_eq!(parse_line(&line).unwrap(), parse_line(TABLE_ONE).unwrap());
    }

    #[test]
    fn missing_review_text_fails() {
        assert_eq!(
            parse_line(r#"{"reviewerID":"A1"}"#),
            Err(ParseError::MissingField("asin"))
        );
        let no_text = TABLE_ONE.replace(r#""reviewText":"This phone case is great.","#, "");
        assert_eq!(parse_line(&no_text), Err(ParseError::MissingField("reviewText")));
        let null_text = TABLE_ONE.replace(r#""This phone case is great.""#, "null");
        assert_eq!(parse_line(&null_text), Err(ParseError::MissingField("reviewText")));
    }

    #[test]
    fn rating_out_of_range_fails() {
        let line = r#"{"reviewerID":"A1","asin":"B001","reviewText":"x","summary":"","overall":7,"helpful":[0,0],"unixReviewTime":0,"class":0}"#;
        assert_eq!(parse_line(line), Err(ParseError::RatingOutOfRange(7.0)));
        let frac = line.replace("\"overall\":7", "\"overall\":4.5");
        assert_eq!(parse_line(&frac), Err(ParseError::RatingOutOfRange(4.5)));
        let float_ok = line.replace("\"overall\":7", "\"overall\":4.0");
        assert_eq!(parse_line(&float_ok).unwrap().rating, 4);
    }

    #[test]
    fn helpful_votes_must_not_exceed_total() {
        let line = TABLE_ONE.replace("[3,5]", "[6,5]");
        assert_eq!(
            parse_line(&line),
            Err(ParseError::HelpfulExceedsTotal { helpful: 6, total: 5 })
        );
        let short = TABLE_ONE.replace("[3,5]", "[3]");
        assert_eq!(parse_line(&short), Err(ParseError::HelpfulShape(1)));
    }

    #[test]
    fn label_must_be_binary() {
        let line = TABLE_ONE.replace("\"class\":1", "\"class\":2");
        assert_eq!(parse_line(&line), Err(ParseError::InvalidLabel(2)));
    }

    #[test]
    fn malformed_json_fails() {
        assert!(matches!(parse_line("{not json"), Err(ParseError::Json(_))));
    }

    #[test]
    fn json_line_round_trip() {
        let r = parse_line(TABLE_ONE).unwrap();
        assert_eq!(parse_line(&r.to_json_line()).unwrap(), r);
    }

    fn three_lines(middle: &str) -> String {
        format!("{TABLE_ONE}\n{middle}\n{}\n", TABLE_ONE.replace("A1", "A3"))
    }

    #[test]
    fn load_counts_clean_input() {
        let text = three_lines(&TABLE_ONE.replace("A1", "A2"));
        let loaded = load_reader(Cursor::new(text), ErrorPolicy::Skip).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.stats.total_read, 3);
        assert_eq!(loaded.stats.kept, 3);
        assert_eq!(loaded.records[2].reviewer_id, "A3");
    }

    #[test]
    fn load_skips_malformed_line() {
        let loaded = load_reader(Cursor::new(three_lines("{oops")), ErrorPolicy::Skip).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.stats.dropped_malformed, 1);
        assert_eq!(loaded.rejections[0].line, 2);
        assert!(loaded.stats.is_balanced());
    }

    #[test]
    fn load_abort_names_line() {
        let err = load_reader(Cursor::new(three_lines("{oops")), ErrorPolicy::Abort).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn load_counts_missing_fields_as_null() {
        let loaded = load_reader(Cursor::new(three_lines(r#"{"reviewerID":"A1"}"#)), ErrorPolicy::Skip).unwrap();
        assert_eq!(loaded.stats.dropped_null, 1);
        assert_eq!(loaded.stats.dropped_malformed, 0);
    }

    #[test]
    fn load_handles_crlf_and_missing_final_newline() {
        let text = format!("{TABLE_ONE}\r\n{TABLE_ONE}");
        let loaded = load_reader(Cursor::new(text), ErrorPolicy::Abort).unwrap();
        assert_eq!(loaded.stats.total_read, 2);
    }

    #[test]
    fn load_detects_gzip() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reviews.jsonl.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::fast());
        enc.write_all(three_lines(TABLE_ONE).as_bytes()).unwrap();
        enc.finish().unwrap();
        let loaded = load_corpus(&path, ErrorPolicy::Abort).unwrap();
        assert_eq!(loaded.stats.kept, 3);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/reviews.jsonl"), ErrorPolicy::Skip).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn clean_drops_identical_records() {
        let a = record("A1", "good", 1, Label::Spam);
        let (out, stats) = clean(vec![a.clone(), a]);
        assert_eq!(out.len(), 1);
        assert_eq!(stats.dropped_duplicate, 1);
    }

    #[test]
    fn clean_drops_whitespace_text() {
        let (out, stats) = clean(vec![record("A1", "   ", 1, Label::Spam)]);
        assert!(out.is_empty());
        assert_eq!(stats.dropped_null, 1);
    }

    #[test]
    fn clean_treats_rating_only_difference_as_duplicate() {
        let a = record("A1", "good", 1, Label::Spam);
        let mut b = a.clone();
        b.rating = 1;
        let (out, stats) = clean(vec![a.clone(), b]);
        assert_eq!(out, vec![a]);
        assert_eq!(stats.dropped_duplicate, 1);
    }

    #[test]
    fn clean_matches_pairwise_key_oracle() {
        let records: Vec<ReviewRecord> = [
            ("A1", "good", 1),
            ("A1", "good", 2),
            ("A2", "good", 1),
            ("A1", "Good", 1),
            ("A1", "good", 1),
        ]
        .iter()
        .map(|&(who, text, t)| record(who, text, t, Label::Spam))
        .collect();
        // Oracle: a record survives iff no earlier record has an equal key.
        let expected: Vec<ReviewRecord> = records
            .iter()
            .enumerate()
            .filter(|(i, r)| {
                !records[..*i].iter().any(|p| {
                    p.reviewer_id == r.reviewer_id
                        && p.product_id == r.product_id
                        && p.unix_review_time == r.unix_review_time
                        && p.review_text == r.review_text
                })
            })
            .map(|(_, r)| r.clone())
            .collect();
        assert_eq!(expected.len(), 4);
        assert_eq!(clean(records).0, expected);
    }

    #[test]
    fn stats_chain_balances() {
        let text = three_lines("{oops");
        let loaded = load_reader(Cursor::new(text), ErrorPolicy::Skip).unwrap();
        let (_, clean_stats) = clean(loaded.records.clone());
        let total = loaded.stats.then(clean_stats);
        assert!(total.is_balanced());
        assert_eq!(total.total_read, 3);
    }

    fn balanced(n_each: usize) -> Vec<ReviewRecord> {
        (0..2 * n_each)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Spam } else { Label::NonSpam };
                record(&format!("R{i}"), "text", i as i64, label)
            })
            .collect()
    }

    #[test]
    fn stratified_split_is_exact_on_proportional_input() {
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        };
        let (train, test) = split(balanced(5), &spec).unwrap();
        assert_eq!(train.iter().filter(|r| r.label.is_spam()).count(), 4);
        assert_eq!(train.iter().filter(|r| !r.label.is_spam()).count(), 4);
        assert_eq!(test.len(), 2);
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SplitSpec::default();
        assert_eq!(split(balanced(20), &spec).unwrap(), split(balanced(20), &spec).unwrap());
        let other = SplitSpec { seed: 7, ..spec };
        assert_ne!(
            split(balanced(20), &spec).unwrap(),
            split(balanced(20), &other).unwrap()
        );
    }

    #[test]
    fn half_split_is_disjoint_and_exhaustive() {
        let spec = SplitSpec {
            train_fraction: 0.5,
            seed: 1,
            stratified: false,
        };
        let (train, test) = split(balanced(50), &spec).unwrap();
        assert_eq!(train.len(), 50);
        let a: HashSet<_> = train.iter().map(|r| r.reviewer_id.clone()).collect();
        let b: HashSet<_> = test.iter().map(|r| r.reviewer_id.clone()).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 100);
    }

    #[test]
    fn stratified_split_needs_two_per_class() {
        let mut recs = balanced(3);
        recs.retain(|r| !r.label.is_spam() || r.reviewer_id == "R0");
        assert!(matches!(
            split(recs, &SplitSpec::default()),
            Err(Error::ClassTooSmall { label: 0, count: 1 })
        ));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let spec = SplitSpec {
            train_fraction: 1.0,
            ..SplitSpec::default()
        };
        assert!(matches!(split(balanced(3), &spec), Err(Error::Config(_))));
    }

    fn arb_records() -> impl Strategy<Value = Vec<ReviewRecord>> {
        proptest::collection::vec((0u8..4, 0u8..3, 0i64..3, any::<bool>(), 1u8..6), 0..60).prop_map(|rows| {
            rows.into_iter()
                .map(|(who, text, t, spam, rating)| {
                    let texts = ["good", "bad", "  "];
                    let mut r = record(
                        &format!("A{who}"),
                        texts[text as usize],
                        t,
                        if spam { Label::Spam } else { Label::NonSpam },
                    );
                    r.rating = rating;
                    r
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn clean_is_idempotent_and_balanced(records in arb_records()) {
            let (once, stats) = clean(records);
            prop_assert!(stats.is_balanced());
            let (twice, stats2) = clean(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(stats2.kept, stats2.total_read);
        }

        #[test]
        fn stratified_split_preserves_ratio(
            n_spam in 2usize..80,
            n_ham in 2usize..80,
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let records: Vec<ReviewRecord> = (0..n_spam + n_ham)
                .map(|i| record(&format!("R{i}"), "t", 0, if i < n_spam { Label::Spam } else { Label::NonSpam }))
                .collect();
            let spec = SplitSpec { train_fraction: fraction, seed, stratified: true };
            let (train, test) = split(records, &spec).unwrap();
            prop_assert_eq!(train.len() + test.len(), n_spam + n_ham);
            let ratio_in = n_spam as f64 / (n_spam + n_ham) as f64;
            let ratio_train = train.iter().filter(|r| r.label.is_spam()).count() as f64 / train.len() as f64;
            prop_assert!((ratio_train - ratio_in).abs() <= 1.0 / train.len() as f64 + 1e-12);
        }
    }
}
