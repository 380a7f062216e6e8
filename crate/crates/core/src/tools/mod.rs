//! Analysis tools invoked by the workflow, and the dispatcher that routes
//! named [`ToolCall`]s to them.
//!
//! All interval parameters a caller passes through [`dispatch`] are absolute
//! data indices with an inclusive end (`[start, end]`), matching what agents
//! see in prompts. The functions in this module take window-relative,
//! end-exclusive ranges.

mod dispatch;
mod knowledge;
mod localize;
mod stats;
mod structure;
mod zscore;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dispatch::{dispatch, parse_scope, tool_catalog, ToolContext, TOOL_NAMES};
pub use knowledge::{query_knowledge, KnowledgeKind, KnowledgeRecord, KnowledgeStore};
pub use localize::{
    localize_candidates, parse_localizer_reply, proxy_candidates, render_range, render_values,
    LocalizeParams, Localization, LocalizationSource, LocalizerExchange,
};
pub use stats::{stat_features, StatSummary};
pub use structure::{global_structure, local_structure, StructureReport, SHIFT_GAP_FACTOR};
pub use zscore::{diff_zscore, ZScoreReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("window too short: need at least {needed} points, got {got}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("interval [{start}, {end}) is outside the window of length {len}")]
    IntervalOutOfBounds { start: usize, end: usize, len: usize },
    #[error("interval [{start}, {end}) has no flanking context inside the window")]
    EmptyContext { start: usize, end: usize },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid parameters for `{tool}`: {reason}")]
    ParamValidation { tool: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Local,
    Global,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Local => "local",
            Scope::Global => "global",
        })
    }
}

/// A scalar tool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Number(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Number(x) => Some(x),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(i) => Some(i),
            ParamValue::Number(x) if x.fract() == 0.0 && x.abs() < 9e15 => Some(x as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

/// A named tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

/// Window-relative, end-exclusive candidate region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateInterval {
    pub start: usize,
    pub end: usize,
    pub saliency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum ToolPayload {
    Stats(StatSummary),
    ZScore(ZScoreReport),
    Structure(StructureReport),
    Knowledge(Vec<KnowledgeRecord>),
    Candidates(Vec<CandidateInterval>),
}

/// Output of one tool invocation plus its prompt rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    /// Absolute, inclusive range the tool looked at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
    pub payload: ToolPayload,
    pub summary: String,
}

impl ToolResult {
    pub fn new(tool: &str, span: Option<[usize; 2]>, payload: ToolPayload) -> Self {
        let summary = render_summary(tool, span, &payload);
        Self {
            tool: tool.to_string(),
            span,
            payload,
            summary,
        }
    }

    /// Absolute point ranges (inclusive) this result flags as suspicious.
    pub fn evidence(&self) -> Vec<[usize; 2]> {
        match &self.payload {
            ToolPayload::ZScore(z) => z.outlier_indices.iter().map(|&i| [i, i + 1]).collect(),
            ToolPayload::Structure(s) => {
                let mut out = Vec::new();
                if let Some(i) = s.level_shift_index {
                    out.push([i, i]);
                }
                if s.scope == Scope::Local && s.context_deviation.is_some_and(|d| d >= 3.0) {
                    out.push(s.span);
                }
                out
            }
            _ => Vec::new(),
        }
    }
}

pub(crate) fn fmt_num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.4}")
    }
}

fn fmt_span(span: Option<[usize; 2]>) -> String {
    match span {
        Some([s, e]) => format!(" on [{s}, {e}]"),
        None => String::new(),
    }
}

fn render_summary(tool: &str, span: Option<[usize; 2]>, payload: &ToolPayload) -> String {
    let on = fmt_span(span);
    match payload {
        ToolPayload::Stats(s) => format!(
            "{tool}{on}: n={} mean={} std={} min={} max={} median={} iqr={}",
            s.n,
            fmt_num(s.mean),
            fmt_num(s.std),
            fmt_num(s.min),
            fmt_num(s.max),
            fmt_num(s.median),
            fmt_num(s.iqr)
        ),
        ToolPayload::ZScore(z) => {
            let by_index: BTreeMap<usize, f64> = z.scores.iter().copied().collect();
            let outliers: Vec<String> = z
                .outlier_indices
                .iter()
                .map(|i| format!("{i}:{:+.4}", by_index.get(i).copied().unwrap_or(0.0)))
                .collect();
            let max_abs = z.scores.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
            format!(
                "{tool}({}){on}: threshold={} degenerate={} max_abs_z={} outliers=[{}] (outlier i marks the jump from point i to point i+1)",
                z.scope,
                fmt_num(z.threshold),
                z.degenerate,
                fmt_num(max_abs),
                outliers.join(", ")
            )
        }
        ToolPayload::Structure(s) => {
            let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
            match s.scope {
                Scope::Global => format!(
                    "{tool}{on}: trend_slope={} dominant_period={} level_shift_index={}",
                    fmt_num(s.trend_slope),
                    opt(s.dominant_period),
                    opt(s.level_shift_index)
                ),
                Scope::Local => format!(
                    "{tool}{on}: trend_slope={} context_deviation={}",
                    fmt_num(s.trend_slope),
                    s.context_deviation.map_or("none".to_string(), fmt_num)
                ),
            }
        }
        ToolPayload::Knowledge(records) => {
            let mut out = format!("{tool}: {} record(s)", records.len());
            for r in records {
                out.push_str(&format!("\n- {}: {}", r.id, r.body));
            }
            out
        }
        ToolPayload::Candidates(c) => {
            let items: Vec<String> = c
                .iter()
                .map(|c| format!("[{}, {}) saliency={}", c.start, c.end, fmt_num(c.saliency)))
                .collect();
            format!("{tool}{on}: {}", items.join("; "))
        }
    }
}

/// Serializes `f64` as a JSON number, or as `"inf"` / `"-inf"` when infinite,
/// so reports survive a JSON round trip.
pub(crate) mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => {
                s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
            }
            Some(x) => s.serialize_f64(*x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" => Ok(Some(f64::INFINITY)),
                "-inf" => Ok(Some(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}
