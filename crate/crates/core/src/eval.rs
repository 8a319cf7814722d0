//! Confusion matrices, accuracy / precision / recall / F1, and model comparison.
//!
//! Spam is the positive class. A metric whose denominator is zero is
//! undefined and carried as `None`; reports render it as `undefined`.

use std::cmp::Ordering;
use std::io::Write;
use std::ops::{Add, Div, Mul};

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::csv_err;

/// Exact rational metric value.
pub type ExactRatio = Ratio<u128>;

/// Marker written in place of an undefined metric.
pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Tallies thresholded scores against labels (`true` = spam).
/// A score equal to the threshold is predicted positive.
pub fn confusion<T: PartialOrd + Copy>(predictions: &[T], labels: &[bool], threshold: T) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs labels",
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        cm.record(p >= threshold, l);
    }
    Ok(cm)
}

/// Number type a metric can be computed in.
pub trait MetricValue: Copy + PartialOrd + Add<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn from_count(n: u64) -> Self;
    fn is_zero_value(&self) -> bool;
    fn to_f64_lossy(&self) -> f64;
}

impl MetricValue for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn is_zero_value(&self) -> bool {
        *self == 0.0
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl MetricValue for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn is_zero_value(&self) -> bool {
        *self == 0.0
    }

    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

macro_rules! rational_metric {
    ($($t:ty),*) => {$(
        impl MetricValue for Ratio<$t> {
            fn from_count(n: u64) -> Self {
                Ratio::from_integer(n as $t)
            }

            fn is_zero_value(&self) -> bool {
                *self.numer() == 0
            }

            fn to_f64_lossy(&self) -> f64 {
                *self.numer() as f64 / *self.denom() as f64
            }
        }
    )*};
}
rational_metric!(u64, u128, i128);

fn ratio<T: MetricValue>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::from_count(num) / T::from_count(den))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: MetricValue"))]
pub struct MetricsReport<T> {
    #[serde(rename = "model")]
    pub model_name: String,
    pub confusion: ConfusionMatrix,
    #[serde(serialize_with = "serialize_metric")]
    pub accuracy: Option<T>,
    #[serde(serialize_with = "serialize_metric")]
    pub precision: Option<T>,
    #[serde(serialize_with = "serialize_metric")]
    pub recall: Option<T>,
    #[serde(serialize_with = "serialize_metric")]
    pub f1: Option<T>,
}

fn serialize_metric<T: MetricValue, S: Serializer>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(x.to_f64_lossy()),
        None => s.serialize_str(UNDEFINED),
    }
}

/// Accuracy, precision, recall and F1 (harmonic mean of precision and recall).
pub fn metrics<T: MetricValue>(model_name: impl Into<String>, cm: &ConfusionMatrix) -> MetricsReport<T> {
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision: Option<T> = ratio(cm.tp, cm.tp + cm.fp);
    let recall: Option<T> = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if !(p + r).is_zero_value() => Some(T::from_count(2) * p * r / (p + r)),
        _ => None,
    };
    MetricsReport {
        model_name: model_name.into(),
        confusion: *cm,
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// `0.90354` → `"90.35"`; `None` → `"undefined"`.
pub fn format_percent<T: MetricValue>(v: Option<T>) -> String {
    match v {
        Some(x) => format!("{:.2}", x.to_f64_lossy() * 100.0),
        None => UNDEFINED.to_string(),
    }
}

/// One rendered row of the comparison table; metrics are percentages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
}

/// Rows ordered by descending accuracy, ties broken by model name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn by_accuracy_desc<T: MetricValue>(a: &MetricsReport<T>, b: &MetricsReport<T>) -> Ordering {
    let acc = match (a.accuracy, b.accuracy) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    acc.then_with(|| a.model_name.cmp(&b.model_name))
}

pub fn compare_models<T: MetricValue>(reports: &[MetricsReport<T>]) -> ComparisonTable {
    let mut sorted: Vec<&MetricsReport<T>> = reports.iter().collect();
    sorted.sort_by(|a, b| by_accuracy_desc(a, b));
    ComparisonTable {
        rows: sorted
            .into_iter()
            .map(|r| ComparisonRow {
                model: r.model_name.clone(),
                accuracy: format_percent(r.accuracy),
                precision: format_percent(r.precision),
                recall: format_percent(r.recall),
                f1: format_percent(r.f1),
            })
            .collect(),
    }
}

impl ComparisonTable {
    /// CSV with header `model,accuracy,precision,recall,f1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        if self.rows.is_empty() {
            w.write_record(["model", "accuracy", "precision", "recall", "f1"])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}
