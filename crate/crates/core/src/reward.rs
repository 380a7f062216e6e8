//! Offline per-episode scoring: a two-sided precision/recall term, a
//! false-positive penalty and a rule-matching term, combined with
//! configurable weights. Each component can be switched off on its own.
//!
//! Indices passed to the component functions are positions in `truth`.
//! [`score_episode`] shifts a trace's absolute verdicts into its window first.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Counts;
use crate::protocol::AnomalyVerdict;
use crate::tools::KnowledgeStore;
use crate::workflow::EpisodeTrace;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("ground truth labels are required")]
    MissingTruth,
    #[error("truth has {truth} points but the trace window has {window}")]
    WindowTruthMismatch { window: usize, truth: usize },
    #[error("invalid reward weights: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w_ts: f64,
    pub w_rm: f64,
    pub w_fp: f64,
    pub two_sided: bool,
    pub fp_penalty: bool,
    pub rule_matching: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_ts: 1.0,
            w_rm: 0.5,
            w_fp: 1.0,
            two_sided: true,
            fp_penalty: true,
            rule_matching: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, w) in [("w_ts", self.w_ts), ("w_rm", self.w_rm), ("w_fp", self.w_fp)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RewardError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Component values. A disabled component is reported as 0 and does not
/// enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub two_sided: f64,
    pub fp_penalty: f64,
    pub rule_matching: f64,
    pub total: f64,
}

fn predicted(verdicts: &[AnomalyVerdict], t: usize) -> Vec<u8> {
    let mut labels = vec![0u8; t];
    for v in verdicts {
        if v.start() < t {
            labels[v.start()..=v.end().min(t - 1)].fill(1);
        }
    }
    labels
}

/// Mean of point precision and recall of the verdict union.
pub fn two_sided_reward(verdicts: &[AnomalyVerdict], truth: &[u8]) -> Result<f64, RewardError> {
    if truth.is_empty() {
        return Err(RewardError::MissingTruth);
    }
    let counts = Counts::of(&predicted(verdicts, truth.len()), truth).expect("lengths agree");
    let (p, r, _) = counts.scores();
    Ok(0.5 * (p + r))
}

/// Share of the `t` points that are predicted but not truly anomalous.
/// Predicted points past the end of `truth` count as false positives.
pub fn false_positive_penalty(verdicts: &[AnomalyVerdict], truth: &[u8], t: usize) -> f64 {
    let t = t.max(1);
    let reach = verdicts.iter().map(|v| v.end() + 1).max().unwrap_or(0);
    let pred = predicted(verdicts, reach);
    let fp = pred
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p == 1 && truth.get(i).copied().unwrap_or(0) == 0)
        .count();
    fp as f64 / t as f64
}

/// Fraction of verdicts passing all structural checks: known type,
/// explanation present, inside the trace window, confidence 1..=3, and
/// overlapping some tool evidence recorded in the trace. Absolute indices.
pub fn rule_matching_reward(
    verdicts: &[AnomalyVerdict],
    store: &KnowledgeStore,
    trace: &EpisodeTrace,
) -> f64 {
    if verdicts.is_empty() {
        return 1.0;
    }
    let taxonomy = store.taxonomy();
    let evidence = trace.evidence();
    let (lo, hi) = (trace.window.start, trace.window.end);
    let valid = verdicts
        .iter()
        .filter(|v| {
            taxonomy.contains(v.kind.as_str())
                && !v.explanation.trim().is_empty()
                && v.start() <= v.end()
                && v.start() >= lo
                && v.end() < hi
                && (1..=3).contains(&v.confidence)
                && evidence.iter().any(|&e| v.overlaps(e))
        })
        .count();
    valid as f64 / verdicts.len() as f64
}

/// Scores a trace's final verdicts against window-aligned truth.
pub fn score_episode(
    trace: &EpisodeTrace,
    truth: &[u8],
    config: &RewardConfig,
    store: &KnowledgeStore,
) -> Result<RewardBreakdown, RewardError> {
    config.validate()?;
    if truth.is_empty() {
        return Err(RewardError::MissingTruth);
    }
    let window = &trace.window;
    if truth.len() != window.len() {
        return Err(RewardError::WindowTruthMismatch {
            window: window.len(),
            truth: truth.len(),
        });
    }
    let local: Vec<AnomalyVerdict> = trace
        .final_verdicts
        .iter()
        .filter(|v| v.end() >= window.start)
        .map(|v| AnomalyVerdict {
            interval: [v.start().saturating_sub(window.start), v.end() - window.start],
            ..v.clone()
        })
        .collect();

    let two_sided = if config.two_sided { two_sided_reward(&local, truth)? } else { 0.0 };
    let fp_penalty = if config.fp_penalty {
        false_positive_penalty(&local, truth, window.len())
    } else {
        0.0
    };
    let rule_matching = if config.rule_matching {
        rule_matching_reward(&trace.final_verdicts, store, trace)
    } else {
        0.0
    };
    Ok(RewardBreakdown {
        two_sided,
        fp_penalty,
        rule_matching,
        total: config.w_ts * two_sided + config.w_rm * rule_matching - config.w_fp * fp_penalty,
    })
}

/// Written next to a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub series: String,
    pub window_start: usize,
    pub config: RewardConfig,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

/// `foo.trace.jsonl` -> `foo.reward.json`, in the same directory.
pub fn reward_report_path(trace_path: &Path) -> PathBuf {
    let name = trace_path.file_name().and_then(|n| n.to_str()).unwrap_or("episode");
    let stem = name
        .strip_suffix(".trace.jsonl")
        .or_else(|| name.strip_suffix(".jsonl"))
        .unwrap_or(name);
    trace_path.with_file_name(format!("{stem}.reward.json"))
}

pub fn write_reward_report(
    trace_path: &Path,
    trace: &EpisodeTrace,
    config: &RewardConfig,
    breakdown: RewardBreakdown,
) -> Result<PathBuf, RewardError> {
    let report = RewardReport {
        series: trace.series.clone(),
        window_start: trace.window.start,
        config: *config,
        breakdown,
    };
    let path = reward_report_path(trace_path);
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(path)
}
