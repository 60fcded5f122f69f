//! Confusion-matrix metrics and Cohen's kappa.
//!
//! A metric whose denominator is zero is reported as 0 and named in
//! [`ClassificationMetrics::undefined`], so reports never carry NaN.

use std::collections::BTreeMap;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts predictions against truth; `true` is the positive class.
    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch(truth.len(), predicted.len()));
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

/// Parses `tp,fp,tn,fn`.
impl FromStr for ConfusionCounts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u64> = s
            .split(',')
            .map(|p| p.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("confusion counts `{s}`: {e}")))?;
        match parts[..] {
            [tp, fp, tn, fn_] => Ok(Self::new(tp, fp, tn, fn_)),
            _ => Err(Error::InvalidInput(format!(
                "confusion counts `{s}`: expected tp,fp,tn,fn"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Mcc,
    Fpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub fpr: f64,
    /// Metrics whose denominator was zero.
    pub undefined: Vec<Metric>,
}

impl ClassificationMetrics {
    pub fn is_defined(&self, m: Metric) -> bool {
        !self.undefined.contains(&m)
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    if c.total() == 0 {
        return Err(Error::InvalidInput("all confusion counts are zero".into()));
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: f64, den: f64, m: Metric| {
        if den == 0.0 {
            undefined.push(m);
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp, Metric::Precision);
    let recall = ratio(tp, tp + fn_, Metric::Recall);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_, Metric::F1);
    let fpr = ratio(fp, fp + tn, Metric::Fpr);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den, Metric::Mcc).clamp(-1.0, 1.0);
    Ok(ClassificationMetrics {
        precision,
        recall,
        f1,
        mcc,
        fpr,
        undefined,
    })
}

/// `(p_o - p_e) / (1 - p_e)` with `p_e` from each rater's marginal
/// frequencies. When `p_e = 1` both raters used one shared label throughout
/// and the result is 1.
pub fn cohen_kappa<T: Eq + Hash + Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("no ratings".into()));
    }
    let n = a.len() as f64;
    let mut marg: BTreeMap<&T, (f64, f64)> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        marg.entry(x).or_default().0 += 1.0;
        marg.entry(y).or_default().1 += 1.0;
        agree += (x == y) as usize;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg.values().map(|(ca, cb)| (ca / n) * (cb / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok(((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}
