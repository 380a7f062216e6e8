use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{TraceError, WorkflowConfig};
use crate::protocol::{AgentRole, AnomalyVerdict};
use crate::series::Window;
use crate::tools::{CandidateInterval, LocalizationSource, ToolCall, ToolResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Localization,
    Planning,
    Acting,
    Detection,
    Evaluation,
    Control,
}

impl Stage {
    pub fn of(role: AgentRole) -> Self {
        match role {
            AgentRole::Localizer => Stage::Localization,
            AgentRole::Locator => Stage::Planning,
            AgentRole::Actor => Stage::Acting,
            AgentRole::Detector => Stage::Detection,
            AgentRole::Evaluator => Stage::Evaluation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// Candidates the episode works with.
    Localize {
        source: LocalizationSource,
        candidates: Vec<CandidateInterval>,
    },
    /// One backend exchange. `reply` is absent when the backend failed.
    Complete {
        role: AgentRole,
        attempt: u8,
        model: String,
        temperature: f64,
        digest: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reply: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parsed: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// One tool dispatch.
    ToolCall {
        call: ToolCall,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<ToolResult>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Note { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: usize,
    pub iteration: usize,
    pub stage: Stage,
    /// Wall-clock milliseconds since the Unix epoch.
    pub at_ms: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Completed,
    /// Localization found nothing to examine.
    ShortCircuited,
    Failed { error: String },
}

/// Ordered record of one episode, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub series: String,
    /// The preprocessed window the episode saw.
    pub window: Window,
    pub config: WorkflowConfig,
    pub events: Vec<TraceEvent>,
    pub final_verdicts: Vec<AnomalyVerdict>,
    pub outcome: EpisodeOutcome,
    pub iterations: usize,
    pub refinement_exhausted: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Header {
        series: String,
        window: Window,
        config: WorkflowConfig,
    },
    Event(TraceEvent),
    Summary {
        final_verdicts: Vec<AnomalyVerdict>,
        outcome: EpisodeOutcome,
        iterations: usize,
        refinement_exhausted: bool,
    },
}

impl EpisodeTrace {
    pub fn new(window: &Window, config: &WorkflowConfig) -> Self {
        Self {
            series: window.parent.clone(),
            window: window.clone(),
            config: config.clone(),
            events: Vec::new(),
            final_verdicts: Vec::new(),
            outcome: EpisodeOutcome::Completed,
            iterations: 0,
            refinement_exhausted: false,
        }
    }

    /// `<series>_<window start>.trace.jsonl`
    pub fn file_name(&self) -> String {
        format!("{}_{}.trace.jsonl", self.series, self.window.start)
    }

    pub fn tool_results(&self) -> impl Iterator<Item = &ToolResult> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::ToolCall {
                result: Some(r), ..
            } => Some(r),
            _ => None,
        })
    }

    pub fn tool_call_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ToolCall { .. }))
            .count()
    }

    pub fn completion_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Complete { .. }))
            .count()
    }

    /// Absolute inclusive ranges flagged by any tool result in the trace.
    pub fn evidence(&self) -> Vec<[usize; 2]> {
        self.tool_results().flat_map(ToolResult::evidence).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TraceLine| {
            out.push_str(&serde_json::to_string(line).expect("trace line serializes"));
            out.push('\n');
        };
        push(&TraceLine::Header {
            series: self.series.clone(),
            window: self.window.clone(),
            config: self.config.clone(),
        });
        for e in &self.events {
            push(&TraceLine::Event(e.clone()));
        }
        push(&TraceLine::Summary {
            final_verdicts: self.final_verdicts.clone(),
            outcome: self.outcome.clone(),
            iterations: self.iterations,
            refinement_exhausted: self.refinement_exhausted,
        });
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TraceError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        Self::from_lines(BufReader::new(file).lines())
    }

    fn from_lines(
        lines: impl Iterator<Item = std::io::Result<String>>,
    ) -> Result<Self, TraceError> {
        let mut trace: Option<EpisodeTrace> = None;
        let mut summarized = false;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let structure = |reason: &str| TraceError::Structure {
                line: i + 1,
                reason: reason.to_string(),
            };
            if summarized {
                return Err(structure("content after the summary line"));
            }
            match (parsed, trace.as_mut()) {
                (TraceLine::Header { series, window, config }, None) => {
                    let mut t = EpisodeTrace::new(&window, &config);
                    t.series = series;
                    trace = Some(t);
                }
                (TraceLine::Header { .. }, Some(_)) => return Err(structure("second header")),
                (_, None) => return Err(structure("first line must be the header")),
                (TraceLine::Event(e), Some(t)) => {
                    if e.seq != t.events.len() {
                        return Err(structure("events out of order"));
                    }
                    t.events.push(e);
                }
                (
                    TraceLine::Summary {
                        final_verdicts,
                        outcome,
                        iterations,
                        refinement_exhausted,
                    },
                    Some(t),
                ) => {
                    t.final_verdicts = final_verdicts;
                    t.outcome = outcome;
                    t.iterations = iterations;
                    t.refinement_exhausted = refinement_exhausted;
                    summarized = true;
                }
            }
        }
        match trace {
            Some(t) if summarized => Ok(t),
            Some(_) => Err(TraceError::Structure {
                line: 0,
                reason: "missing summary line".into(),
            }),
            None => Err(TraceError::Structure {
                line: 0,
                reason: "empty trace".into(),
            }),
        }
    }
}
