//! Monthly review volume and reviewer-frequency segmentation.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{DateTime, Datelike};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::ReviewRecord;
use crate::error::{Error, Result};
use crate::features::csv_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    /// UTC calendar month of a unix timestamp.
    pub fn of_timestamp(secs: i64) -> Result<Self> {
        let t = DateTime::from_timestamp(secs, 0).ok_or(Error::TimestampOutOfRange(secs))?;
        Ok(Month {
            year: t.year(),
            month: t.month(),
        })
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeSeriesPoint {
    pub year: i32,
    pub month: u32,
    pub total_reviews: u64,
    pub spam_reviews: u64,
}

const CHUNK: usize = 16_384;

type MonthCounts = BTreeMap<Month, (u64, u64)>;

fn merge_months(mut a: MonthCounts, b: MonthCounts) -> MonthCounts {
    for (m, (t, s)) in b {
        let e = a.entry(m).or_default();
        e.0 += t;
        e.1 += s;
    }
    a
}

/// Review and spam counts per UTC month, chronological, with empty months
/// inside the observed range filled with zeros.
pub fn monthly_series(records: &[ReviewRecord]) -> Result<Vec<TimeSeriesPoint>> {
    let partials: Vec<MonthCounts> = records
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut counts = MonthCounts::new();
            for r in chunk {
                let e = counts.entry(Month::of_timestamp(r.unix_review_time)?).or_default();
                e.0 += 1;
                e.1 += r.label.is_spam() as u64;
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let counts = partials.into_iter().fold(MonthCounts::new(), merge_months);

    let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Ok(Vec::new());
    };
    let mut series = Vec::new();
    let mut m = first;
    loop {
        let (total, spam) = counts.get(&m).copied().unwrap_or_default();
        series.push(TimeSeriesPoint {
            year: m.year,
            month: m.month,
            total_reviews: total,
            spam_reviews: spam,
        });
        if m == last {
            break;
        }
        m = m.next();
    }
    Ok(series)
}

pub fn write_series_csv<W: Write>(series: &[TimeSeriesPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "total_reviews", "spam_reviews"])
        .map_err(csv_err)?;
    for p in series {
        w.write_record([
            format!("{:04}-{:02}", p.year, p.month),
            p.total_reviews.to_string(),
            p.spam_reviews.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentName {
    OneTime,
    Occasional,
    Frequent,
}

impl SegmentName {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentName::OneTime => "one_time",
            SegmentName::Occasional => "occasional",
            SegmentName::Frequent => "frequent",
        }
    }
}

/// Cut points `(a, b)`: `[1, a]` one-time, `(a, b]` occasional, `(b, ∞)` frequent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct SegmentBounds(pub u64, pub u64);

impl Default for SegmentBounds {
    fn default() -> Self {
        SegmentBounds(1, 5)
    }
}

impl SegmentBounds {
    pub fn validate(self) -> Result<()> {
        if 1 <= self.0 && self.0 < self.1 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "segment bounds must satisfy 1 <= a < b, got ({}, {})",
                self.0, self.1
            )))
        }
    }

    pub fn classify(self, review_count: u64) -> SegmentName {
        if review_count <= self.0 {
            SegmentName::OneTime
        } else if review_count <= self.1 {
            SegmentName::Occasional
        } else {
            SegmentName::Frequent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewerSegment {
    pub name: SegmentName,
    /// Inclusive review-count range; `max` is `None` for the open-ended segment.
    pub min_reviews: u64,
    pub max_reviews: Option<u64>,
    pub reviewer_count: u64,
    pub review_count: u64,
    pub spam_reviews: u64,
    /// Spam reviews over all reviews written by segment members.
    pub spam_rate: Option<f64>,
}

type ReviewerTally<'a> = HashMap<&'a str, (u64, u64)>;

/// Groups reviewers by how many reviews they wrote.
pub fn segment_reviewers(records: &[ReviewRecord], bounds: SegmentBounds) -> Result<Vec<ReviewerSegment>> {
    bounds.validate()?;
    let tally: ReviewerTally = records
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = ReviewerTally::new();
            for r in chunk {
                let e = t.entry(r.reviewer_id.as_str()).or_default();
                e.0 += 1;
                e.1 += r.label.is_spam() as u64;
            }
            t
        })
        .reduce(ReviewerTally::new, |a, b| {
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            for (k, (n, s)) in small {
                let e = big.entry(k).or_default();
                e.0 += n;
                e.1 += s;
            }
            big
        });

    let names = [SegmentName::OneTime, SegmentName::Occasional, SegmentName::Frequent];
    let mut acc = [(0u64, 0u64, 0u64); 3];
    for &(n, s) in tally.values() {
        let slot = &mut acc[bounds.classify(n) as usize];
        slot.0 += 1;
        slot.1 += n;
        slot.2 += s;
    }
    let ranges = [
        (1, Some(bounds.0)),
        (bounds.0 + 1, Some(bounds.1)),
        (bounds.1 + 1, None),
    ];
    Ok(names
        .into_iter()
        .zip(acc)
        .zip(ranges)
        .map(|((name, (reviewers, reviews, spam)), (min, max))| ReviewerSegment {
            name,
            min_reviews: min,
            max_reviews: max,
            reviewer_count: reviewers,
            review_count: reviews,
            spam_reviews: spam,
            spam_rate: (reviews > 0).then(|| spam as f64 / reviews as f64),
        })
        .collect())
}

pub fn write_segments_csv<W: Write>(segments: &[ReviewerSegment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "segment",
        "min_reviews",
        "max_reviews",
        "reviewer_count",
        "review_count",
        "spam_reviews",
        "spam_rate",
    ])
    .map_err(csv_err)?;
    for s in segments {
        w.write_record([
            s.name.as_str().to_string(),
            s.min_reviews.to_string(),
            s.max_reviews.map_or_else(|| "inf".to_string(), |m| m.to_string()),
            s.reviewer_count.to_string(),
            s.review_count.to_string(),
            s.spam_reviews.to_string(),
            s.spam_rate
                .map_or_else(|| crate::eval::UNDEFINED.to_string(), |r| format!("{r:.6}")),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}
