//! Evaluation arithmetic: overlap, area error, classification agreement,
//! ROC AUC and summary statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::LabelGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    DimsMismatch(Vec<usize>, Vec<usize>),
    #[error("ground-truth area {0} must be positive")]
    NonPositiveGroundTruth(f64),
    #[error("input is empty")]
    EmptyInput,
    #[error("all labels belong to one class; AUC is undefined")]
    SingleClassInput,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
}

/// Dice similarity `2|a ∧ b| / (|a| + |b|)`, 1.0 when both are empty.
pub fn dice<G: LabelGrid + ?Sized>(a: &G, b: &G) -> Result<f64, MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::DimsMismatch(a.shape(), b.shape()));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Signed and absolute percentage error of `pred` relative to `gt`.
pub fn area_errors(gt_cm2: f64, pred_cm2: f64) -> Result<(f64, f64), MetricsError> {
    if !pred_cm2.is_finite() {
        return Err(MetricsError::NonFinite(pred_cm2));
    }
    if !(gt_cm2.is_finite() && gt_cm2 > 0.0) {
        return Err(MetricsError::NonPositiveGroundTruth(gt_cm2));
    }
    let signed = (pred_cm2 - gt_cm2) / gt_cm2 * 100.0;
    Ok((signed, signed.abs()))
}

/// Per-scan comparison of a prediction against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scan_id: String,
    pub dice: f64,
    pub gt_area_cm2: f64,
    pub pred_area_cm2: f64,
    pub abs_pct_error: f64,
    pub signed_pct_error: f64,
    pub gt_sarcopenic: Option<bool>,
    pub pred_sarcopenic: Option<bool>,
}

impl EvalRecord {
    pub fn new(
        scan_id: impl Into<String>,
        dice: f64,
        gt_area_cm2: f64,
        pred_area_cm2: f64,
        gt_sarcopenic: Option<bool>,
        pred_sarcopenic: Option<bool>,
    ) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&dice) {
            return Err(MetricsError::NonFinite(dice));
        }
        let (signed_pct_error, abs_pct_error) = area_errors(gt_area_cm2, pred_area_cm2)?;
        Ok(Self {
            scan_id: scan_id.into(),
            dice,
            gt_area_cm2,
            pred_area_cm2,
            abs_pct_error,
            signed_pct_error,
            gt_sarcopenic,
            pred_sarcopenic,
        })
    }

    /// `(predicted, actual)` sarcopenia when both are known.
    pub fn classification(&self) -> Option<(bool, bool)> {
        Some((self.pred_sarcopenic?, self.gt_sarcopenic?))
    }
}

/// Confusion counts with sarcopenic as the positive class. Ratios with a
/// zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassificationMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<Self, MetricsError> {
        let total = tp + fp + fn_ + tn;
        if total == 0 {
            return Err(MetricsError::EmptyInput);
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Ok(Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tallies `(predicted, actual)` pairs.
pub fn confusion_metrics(pairs: &[(bool, bool)]) -> Result<ClassificationMetrics, MetricsError> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(pred, actual) in pairs {
        match (pred, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ClassificationMetrics::from_counts(tp, fp, fn_, tn)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from average
/// ranks (Mann-Whitney U).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClassInput);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the mean rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Location and spread of one field; `std` uses divisor N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    /// Order-independent: values are sorted before any arithmetic.
    pub fn of(values: &[f64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(bad));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let (min, max) = (v[0], v[n - 1]);
        let mean = (v.iter().sum::<f64>() / n as f64).clamp(min, max);
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        Ok(Self {
            n,
            mean,
            std: var.sqrt(),
            median,
            min,
            max,
        })
    }
}

/// Summary over a set of [`EvalRecord`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dice: SummaryStats,
    pub signed_pct_error: SummaryStats,
    pub abs_pct_error: SummaryStats,
    /// Present when at least one record has both sarcopenia labels.
    pub classification: Option<ClassificationMetrics>,
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary, MetricsError> {
    let field =
        |f: fn(&EvalRecord) -> f64| SummaryStats::of(&records.iter().map(f).collect::<Vec<_>>());
    let pairs: Vec<(bool, bool)> = records
        .iter()
        .filter_map(EvalRecord::classification)
        .collect();
    Ok(EvalSummary {
        dice: field(|r| r.dice)?,
        signed_pct_error: field(|r| r.signed_pct_error)?,
        abs_pct_error: field(|r| r.abs_pct_error)?,
        classification: if pairs.is_empty() {
            None
        } else {
            Some(confusion_metrics(&pairs)?)
        },
    })
}
