//! Point-level precision, recall and F1; Best-F1 threshold sweeps; dataset
//! aggregation by pooled counts.
//!
//! Verdict intervals are closed: `[2, 4]` labels points 2, 3 and 4.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::AnomalyVerdict;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("interval [{start}, {end}] is outside [0, {len})")]
    IntervalOutOfBounds { start: usize, end: usize, len: usize },
    #[error("min_confidence must be in 1..=3, got {0}")]
    InvalidMinConfidence(u8),
    #[error("prediction has {pred} points but truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("ground truth labels are required")]
    MissingTruth,
    #[error("no reports to aggregate")]
    NoReports,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn of(pred: &[u8], truth: &[u8]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let mut c = Counts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `(precision, recall, f1)`. All three are 1 when there is nothing to
    /// find and nothing was predicted; otherwise undefined ratios are 0.
    pub fn scores(self) -> (f64, f64, f64) {
        let Counts { tp, fp, fn_ } = self;
        if tp == 0 && fp == 0 && fn_ == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f1)
    }

    fn add(self, other: Counts) -> Counts {
        Counts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_f1: Option<f64>,
    pub best_threshold: Option<f64>,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn from_counts(counts: Counts) -> Self {
        let (precision, recall, f1) = counts.scores();
        Self {
            precision,
            recall,
            f1,
            best_f1: None,
            best_threshold: None,
            counts,
        }
    }

    pub fn with_sweep(mut self, sweep: &Sweep) -> Self {
        self.best_f1 = Some(sweep.best_f1);
        self.best_threshold = Some(sweep.best_threshold);
        self
    }
}

/// Binary labels of length `t`: 1 on the union of verdict intervals whose
/// confidence is at least `min_confidence`.
pub fn verdicts_to_labels(
    verdicts: &[AnomalyVerdict],
    t: usize,
    min_confidence: u8,
) -> Result<Vec<u8>, EvalError> {
    if !(1..=3).contains(&min_confidence) {
        return Err(EvalError::InvalidMinConfidence(min_confidence));
    }
    let mut labels = vec![0u8; t];
    for v in verdicts {
        let [s, e] = v.interval;
        if s > e || e >= t {
            return Err(EvalError::IntervalOutOfBounds {
                start: s,
                end: e,
                len: t,
            });
        }
        if v.confidence >= min_confidence {
            labels[s..=e].fill(1);
        }
    }
    Ok(labels)
}

pub fn point_metrics(pred: &[u8], truth: &[u8]) -> Result<MetricsReport, EvalError> {
    Ok(MetricsReport::from_counts(Counts::of(pred, truth)?))
}

#[derive(Debug, Clone, Copy)]
pub enum SweepInput<'a> {
    /// Sweep the verdict confidence cut over `{1, 2, 3}`.
    Confidence {
        verdicts: &'a [AnomalyVerdict],
        truth: &'a [u8],
    },
    /// Sweep `score >= threshold` over every distinct score and `+inf`.
    Score { scores: &'a [f64], truth: &'a [u8] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub best_f1: f64,
    /// Smallest threshold attaining `best_f1`.
    pub best_threshold: f64,
    /// `(threshold, f1)` in ascending threshold order.
    pub curve: Vec<(f64, f64)>,
}

pub fn best_f1(input: SweepInput<'_>) -> Result<Sweep, EvalError> {
    let curve = match input {
        SweepInput::Confidence { verdicts, truth } => {
            if truth.is_empty() {
                return Err(EvalError::MissingTruth);
            }
            let mut curve = Vec::with_capacity(3);
            for c in 1..=3u8 {
                let pred = verdicts_to_labels(verdicts, truth.len(), c)?;
                curve.push((f64::from(c), Counts::of(&pred, truth)?.scores().2));
            }
            curve
        }
        SweepInput::Score { scores, truth } => score_curve(scores, truth)?,
    };
    let (best_threshold, best_f1) = curve
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((t, f)),
        })
        .expect("curve is never empty");
    Ok(Sweep {
        best_f1,
        best_threshold,
        curve,
    })
}

fn score_curve(scores: &[f64], truth: &[u8]) -> Result<Vec<(f64, f64)>, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::MissingTruth);
    }
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: scores.len(),
            truth: truth.len(),
        });
    }
    let positives = truth.iter().filter(|&&t| t != 0).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Walk thresholds from high to low, predicting everything at or above.
    let mut curve = vec![(
        f64::INFINITY,
        Counts {
            tp: 0,
            fp: 0,
            fn_: positives,
        }
        .scores()
        .2,
    )];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            if truth[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Counts {
            tp,
            fp,
            fn_: positives - tp,
        };
        curve.push((level, c.scores().2));
    }
    curve.reverse();
    Ok(curve)
}

/// Pooled-count aggregate of per-series reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Mean of precision, recall, F1 and (when present) Best-F1.
    pub average: f64,
    pub series: usize,
}

/// Micro-averages precision, recall and F1 over pooled counts. Best-F1 is
/// the mean of the per-series values that have one.
pub fn dataset_report(reports: &[MetricsReport]) -> Result<DatasetReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let counts = reports
        .iter()
        .fold(Counts::default(), |acc, r| acc.add(r.counts));
    let mut metrics = MetricsReport::from_counts(counts);
    if reports.len() == 1 {
        metrics.best_f1 = reports[0].best_f1;
        metrics.best_threshold = reports[0].best_threshold;
    } else {
        let bests: Vec<f64> = reports.iter().filter_map(|r| r.best_f1).collect();
        if !bests.is_empty() {
            metrics.best_f1 = Some(bests.iter().sum::<f64>() / bests.len() as f64);
        }
    }
    let mut cols = vec![metrics.precision, metrics.recall, metrics.f1];
    cols.extend(metrics.best_f1);
    let average = cols.iter().sum::<f64>() / cols.len() as f64;
    Ok(DatasetReport {
        metrics,
        average,
        series: reports.len(),
    })
}

pub const CSV_HEADER: [&str; 5] = ["Precision", "Recall", "F1", "Best-F1", "Average"];

/// Writes the header and one row in the order of [`CSV_HEADER`]. A missing
/// Best-F1 is left empty.
pub fn write_report_csv<W: Write>(out: W, report: &DatasetReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let m = &report.metrics;
    let f = |x: f64| format!("{x:.4}");
    w.write_record([
        f(m.precision),
        f(m.recall),
        f(m.f1),
        m.best_f1.map(f).unwrap_or_default(),
        f(report.average),
    ])?;
    w.flush()?;
    Ok(())
}
