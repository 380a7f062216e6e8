//! Agent roles, prompt rendering, reply parsing and chat backends.
//!
//! Every agent-facing interval (in prompts, tool parameters and verdicts) is
//! an absolute data index range with an inclusive end.

pub mod backend;
mod parse;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    build_backend, remote_request_count, request_digest, BackendConfig, BackendError,
    BackendKind, ChatBackend, HeuristicBackend, RecordingBackend, ReplayBackend, ReplayEntry, API_KEY_ENV,
};
pub use parse::{
    parse_actor_calls, parse_detector_verdicts, parse_evaluator_report, parse_locator_plan,
    strip_think,
};
pub use prompt::{render_prompt, template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One message of a chat exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

impl ChatTurn {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }
}

/// The five prompted stages of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Localizer,
    Locator,
    Actor,
    Detector,
    Evaluator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::Localizer,
        AgentRole::Locator,
        AgentRole::Actor,
        AgentRole::Detector,
        AgentRole::Evaluator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Localizer => "localizer",
            AgentRole::Locator => "locator",
            AgentRole::Actor => "actor",
            AgentRole::Detector => "detector",
            AgentRole::Evaluator => "evaluator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Role named by the `[role: x]` header every template starts with.
    pub fn of_prompt(text: &str) -> Option<Self> {
        let rest = text.trim_start().strip_prefix("[role: ")?;
        let name = &rest[..rest.find(']')?];
        Self::parse(name)
    }

    /// Role of the first user turn in `messages`.
    pub fn of_messages(messages: &[ChatTurn]) -> Option<Self> {
        messages
            .iter()
            .find(|m| m.role == ChatRole::User)
            .and_then(|m| Self::of_prompt(&m.content))
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatorPlan {
    pub think: String,
    pub plan: String,
    /// Best-effort thresholds stated in the plan text, keyed by tool or
    /// metric name.
    pub declared_thresholds: BTreeMap<String, f64>,
}

/// One detected anomaly, as the Detector reports it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    /// Absolute data indices, inclusive.
    pub interval: [usize; 2],
    #[serde(rename = "type")]
    pub kind: String,
    pub explanation: String,
    pub confidence: u8,
}

impl AnomalyVerdict {
    pub fn start(&self) -> usize {
        self.interval[0]
    }

    pub fn end(&self) -> usize {
        self.interval[1]
    }

    pub fn overlaps(&self, other: [usize; 2]) -> bool {
        self.start() <= other[1] && other[0] <= self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Good,
    Acceptable,
    Poor,
}

impl Rating {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Some(Rating::Good),
            "acceptable" => Some(Rating::Acceptable),
            "poor" => Some(Rating::Poor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub planning: Rating,
    pub tool_usage: Rating,
    pub reasoning: Rating,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorReport {
    pub issues: Vec<String>,
    pub suggestions: Vec<String>,
    pub needs_refinement: bool,
    pub quality_metrics: QualityMetrics,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no value supplied for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("reply has no <Plan>...</Plan> block")]
    MissingPlanTag,
    #[error("plan block is empty")]
    EmptyPlan,
    #[error("reply contains no tool calls")]
    NoCallsFound,
    #[error("tool call {0} is malformed")]
    MalformedCall(usize),
    #[error("reply contains no JSON array")]
    NoJsonArray,
    #[error("verdict {0} is missing field `{1}`")]
    FieldMissing(usize, String),
    #[error("verdict {0} has an invalid `{1}`")]
    FieldInvalid(usize, String),
    #[error("verdict {0} has confidence outside 1..=3")]
    ConfidenceOutOfRange(usize),
    #[error("reply contains no JSON object")]
    NoJsonObject,
    #[error("evaluator report is missing key `{0}`")]
    KeyMissing(String),
    #[error("evaluator key `{0}` has a rating outside good/acceptable/poor")]
    BadRating(String),
    #[error("evaluator key `{0}` has the wrong type")]
    BadValue(String),
}
