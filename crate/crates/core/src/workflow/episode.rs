use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::trace::{EpisodeOutcome, EpisodeTrace, EventKind, Stage, TraceEvent};
use super::{merge_verdicts, LocalizationMode, Workflow, WorkflowError};
use crate::protocol::{
    parse_actor_calls, parse_detector_verdicts, parse_evaluator_report, parse_locator_plan,
    render_prompt, AgentRole, AnomalyVerdict, ChatTurn, EvaluatorReport, LocatorPlan,
    ProtocolError,
};
use crate::series::Window;
use crate::tools::{
    dispatch, localize_candidates, proxy_candidates, render_range, render_values,
    tool_catalog, CandidateInterval, KnowledgeKind, LocalizationSource, ToolContext, ToolResult,
};

/// Mutable state threaded through one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub window: Window,
    pub candidates: Vec<CandidateInterval>,
    pub plan: Option<LocatorPlan>,
    pub tool_results: Vec<ToolResult>,
    pub verdicts: Vec<AnomalyVerdict>,
    pub evaluator: Option<EvaluatorReport>,
    pub iteration: usize,
    /// Tool calls dispatched so far, successful or not.
    pub calls_made: usize,
    tool_lines: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub verdicts: Vec<AnomalyVerdict>,
    pub trace: EpisodeTrace,
}

/// A failed episode still carries its complete trace.
#[derive(Debug)]
pub struct EpisodeFailure {
    pub error: WorkflowError,
    pub trace: EpisodeTrace,
}

impl std::fmt::Display for EpisodeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "episode at {} failed: {}", self.trace.window.start, self.error)
    }
}

impl std::error::Error for EpisodeFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

const RETRY_NOTE: &str = "Your previous reply could not be used";

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Workflow {
    /// Runs one episode over a preprocessed window.
    pub fn run_episode(&self, window: &Window) -> Result<EpisodeRun, Box<EpisodeFailure>> {
        let mut ep = Episode {
            wf: self,
            trace: EpisodeTrace::new(window, &self.config),
            state: EpisodeState {
                window: window.clone(),
                candidates: Vec::new(),
                plan: None,
                tool_results: Vec::new(),
                verdicts: Vec::new(),
                evaluator: None,
                iteration: 0,
                calls_made: 0,
                tool_lines: Vec::new(),
            },
        };
        match ep.run() {
            Ok(outcome) => {
                ep.trace.outcome = outcome;
                ep.trace.final_verdicts = ep.state.verdicts.clone();
                ep.trace.iterations = ep.state.iteration;
                Ok(EpisodeRun {
                    verdicts: ep.state.verdicts,
                    trace: ep.trace,
                })
            }
            Err(error) => {
                ep.note(format!("episode failed: {error}"));
                ep.trace.outcome = EpisodeOutcome::Failed {
                    error: error.to_string(),
                };
                ep.trace.final_verdicts = Vec::new();
                ep.trace.iterations = ep.state.iteration;
                Err(Box::new(EpisodeFailure {
                    error,
                    trace: ep.trace,
                }))
            }
        }
    }
}

struct Episode<'a> {
    wf: &'a Workflow,
    trace: EpisodeTrace,
    state: EpisodeState,
}

impl Episode<'_> {
    fn push(&mut self, stage: Stage, kind: EventKind) {
        self.trace.events.push(TraceEvent {
            seq: self.trace.events.len(),
            iteration: self.state.iteration,
            stage,
            at_ms: now_ms(),
            kind,
        });
    }

    fn note(&mut self, message: String) {
        self.push(Stage::Control, EventKind::Note { message });
    }

    fn run(&mut self) -> Result<EpisodeOutcome, WorkflowError> {
        self.localize()?;
        if self.state.candidates.is_empty() {
            self.state.iteration = 1;
            self.note("no candidate intervals; episode ends at localization".into());
            return Ok(EpisodeOutcome::ShortCircuited);
        }

        let k = self.wf.config.max_refinements;
        let mut feedback: Option<EvaluatorReport> = None;
        for iteration in 1..=k + 1 {
            self.state.iteration = iteration;
            let plan = self.plan(feedback.as_ref())?;
            self.act(&plan)?;
            self.detect(&plan)?;
            let report = self.evaluate(&plan)?;
            let refine = report.needs_refinement;
            self.state.plan = Some(plan);
            self.state.evaluator = Some(report.clone());
            if !refine {
                break;
            }
            if iteration == k + 1 {
                self.trace.refinement_exhausted = true;
                self.note(format!("refinement requested after {iteration} iteration(s); bound reached"));
                break;
            }
            feedback = Some(report);
        }
        Ok(EpisodeOutcome::Completed)
    }

    fn localize(&mut self) -> Result<(), WorkflowError> {
        let window = &self.state.window;
        let params = &self.wf.config.localize;
        let (candidates, source) = match self.wf.config.localization {
            LocalizationMode::Proxy => (
                proxy_candidates(&window.values, params),
                LocalizationSource::Proxy,
            ),
            LocalizationMode::Backend => {
                let backend = self.wf.agent(AgentRole::Localizer);
                let (model, temperature) = identity(backend);
                match localize_candidates(window, Some(backend), params) {
                    Ok(loc) => {
                        let ex = loc.exchange.clone().expect("backend localization records its exchange");
                        let parsed = (loc.source == LocalizationSource::Backend)
                            .then(|| serde_json::to_value(&loc.candidates).expect("candidates serialize"));
                        let error = match &loc.source {
                            LocalizationSource::Fallback { reason } => Some(reason.clone()),
                            _ => None,
                        };
                        self.push(
                            Stage::Localization,
                            EventKind::Complete {
                                role: AgentRole::Localizer,
                                attempt: 1,
                                model,
                                temperature,
                                digest: ex.digest,
                                reply: Some(ex.reply),
                                parsed,
                                error,
                            },
                        );
                        (loc.candidates, loc.source)
                    }
                    Err(source) => {
                        self.push(
                            Stage::Localization,
                            EventKind::Complete {
                                role: AgentRole::Localizer,
                                attempt: 1,
                                model,
                                temperature,
                                digest: String::new(),
                                reply: None,
                                parsed: None,
                                error: Some(source.to_string()),
                            },
                        );
                        return Err(WorkflowError::Backend {
                            role: AgentRole::Localizer,
                            source,
                        });
                    }
                }
            }
        };
        self.push(
            Stage::Localization,
            EventKind::Localize {
                source,
                candidates: candidates.clone(),
            },
        );
        self.state.candidates = candidates;
        Ok(())
    }

    /// One role exchange under the one-retry rule: a reply that fails to
    /// parse is answered with the error and asked once more.
    fn ask<T: Serialize>(
        &mut self,
        role: AgentRole,
        context: &BTreeMap<String, String>,
        parse: fn(&str) -> Result<T, ProtocolError>,
    ) -> Result<T, WorkflowError> {
        let prompt = render_prompt(role, context)?;
        let mut messages = vec![ChatTurn::user(prompt)];
        let mut last_error = String::new();
        for attempt in 1..=2u8 {
            let backend = self.wf.agent(role);
            let (model, temperature) = identity(backend);
            let digest = backend.digest(&messages);
            let reply = match backend.complete(&messages) {
                Ok(r) => r,
                Err(source) => {
                    self.push(
                        Stage::of(role),
                        EventKind::Complete {
                            role,
                            attempt,
                            model,
                            temperature,
                            digest,
                            reply: None,
                            parsed: None,
                            error: Some(source.to_string()),
                        },
                    );
                    return Err(WorkflowError::Backend { role, source });
                }
            };
            let parsed = parse(&reply);
            let (value, error) = match &parsed {
                Ok(v) => (Some(serde_json::to_value(v).expect("parsed reply serializes")), None),
                Err(e) => (None, Some(e.to_string())),
            };
            self.push(
                Stage::of(role),
                EventKind::Complete {
                    role,
                    attempt,
                    model,
                    temperature,
                    digest,
                    reply: Some(reply.clone()),
                    parsed: value,
                    error,
                },
            );
            match parsed {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last_error = e.to_string();
                    let shown = if reply.trim().is_empty() { "(empty reply)".to_string() } else { reply };
                    messages.push(ChatTurn::assistant(shown));
                    messages.push(ChatTurn::user(format!(
                        "{RETRY_NOTE}: {e}. Answer again, following the reply format exactly."
                    )));
                }
            }
        }
        Err(WorkflowError::RoleFailure {
            role,
            reason: last_error,
        })
    }

    fn base_context(&self) -> BTreeMap<String, String> {
        let w = &self.state.window;
        BTreeMap::from([
            ("Time Series Values".to_string(), render_values(w)),
            ("range".to_string(), render_range(w)),
            ("Vision anomaly intervals".to_string(), self.render_candidates()),
            ("Available Tools".to_string(), tool_catalog(self.wf.store())),
            ("Domain Knowledge".to_string(), self.render_knowledge()),
        ])
    }

    fn render_candidates(&self) -> String {
        let start = self.state.window.start;
        if self.state.candidates.is_empty() {
            return "none".into();
        }
        self.state
            .candidates
            .iter()
            .map(|c| {
                format!(
                    "- [{}, {}] (saliency {:.4})",
                    start + c.start,
                    start + c.end - 1,
                    c.saliency
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn render_knowledge(&self) -> String {
        let store = self.wf.store();
        let mut lines: Vec<String> = Vec::new();
        for kind in [KnowledgeKind::AnomalyType, KnowledgeKind::Domain] {
            for r in store.query(&[], Some(kind)) {
                lines.push(format!("- {}: {}", r.id, r.body));
            }
        }
        lines.join("\n")
    }

    fn render_tools(&self) -> String {
        if self.state.tool_lines.is_empty() {
            "none".into()
        } else {
            self.state.tool_lines.join("\n")
        }
    }

    fn plan(&mut self, feedback: Option<&EvaluatorReport>) -> Result<LocatorPlan, WorkflowError> {
        let mut ctx = self.base_context();
        let fb = match feedback {
            None => "none".to_string(),
            Some(r) => r
                .issues
                .iter()
                .map(|i| format!("- issue: {i}"))
                .chain(r.suggestions.iter().map(|s| format!("- suggestion: {s}")))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        ctx.insert("Evaluator Feedback".into(), if fb.is_empty() { "none".into() } else { fb });
        self.ask(AgentRole::Locator, &ctx, parse_locator_plan)
    }

    fn act(&mut self, plan: &LocatorPlan) -> Result<(), WorkflowError> {
        let mut ctx = self.base_context();
        ctx.insert("Plan".into(), plan.plan.clone());
        let calls = self.ask(AgentRole::Actor, &ctx, parse_actor_calls)?;

        let budget = self.wf.config.tool_budget;
        if self.state.calls_made + calls.len() > budget {
            let err = WorkflowError::ToolBudgetExceeded {
                requested: calls.len(),
                used: self.state.calls_made,
                budget,
            };
            self.note(err.to_string());
            return Err(err);
        }

        for call in calls {
            let tool_ctx = ToolContext {
                window: &self.state.window,
                store: self.wf.store(),
            };
            let outcome = dispatch(&call, &tool_ctx);
            self.state.calls_made += 1;
            let (result, error) = match outcome {
                Ok(r) => {
                    self.state.tool_lines.push(format!("- {}", r.summary));
                    self.state.tool_results.push(r.clone());
                    (Some(r), None)
                }
                Err(e) => {
                    self.state.tool_lines.push(format!("- {} failed: {e}", call.tool));
                    (None, Some(e.to_string()))
                }
            };
            self.push(Stage::Acting, EventKind::ToolCall { call, result, error });
        }
        Ok(())
    }

    fn detect(&mut self, plan: &LocatorPlan) -> Result<(), WorkflowError> {
        let mut ctx = self.base_context();
        ctx.insert("Plan".into(), plan.plan.clone());
        ctx.insert("Used_Tool_Description".into(), self.render_tools());
        let raw = self.ask(AgentRole::Detector, &ctx, parse_detector_verdicts)?;

        let (lo, hi) = (self.state.window.start, self.state.window.last());
        let inside: Vec<AnomalyVerdict> = raw
            .iter()
            .filter(|v| v.end() >= lo && v.start() <= hi)
            .map(|v| AnomalyVerdict {
                interval: [v.start().max(lo), v.end().min(hi)],
                ..v.clone()
            })
            .collect();
        if inside.len() != raw.len() || inside.iter().zip(&raw).any(|(a, b)| a.interval != b.interval) {
            self.note(format!(
                "clipped detector verdicts to the window [{lo}, {hi}]; {} of {} kept",
                inside.len(),
                raw.len()
            ));
        }
        self.state.verdicts = merge_verdicts(&inside, self.wf.config.merge_gap);
        Ok(())
    }

    fn evaluate(&mut self, plan: &LocatorPlan) -> Result<EvaluatorReport, WorkflowError> {
        let ctx = BTreeMap::from([
            ("Plan".to_string(), plan.plan.clone()),
            (
                "Detector Result".to_string(),
                serde_json::to_string(&self.state.verdicts).expect("verdicts serialize"),
            ),
            ("Used_Tool_Description".to_string(), self.render_tools()),
            ("Review Round".to_string(), self.state.iteration.to_string()),
        ]);
        self.ask(AgentRole::Evaluator, &ctx, parse_evaluator_report)
    }
}

fn identity(backend: &dyn crate::protocol::ChatBackend) -> (String, f64) {
    let (m, t) = backend.identity();
    (m.to_string(), t)
}
