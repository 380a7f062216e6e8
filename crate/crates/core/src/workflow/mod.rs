//! The episode state machine: localization, Locator plan, Actor tool batch,
//! Detector verdicts and Evaluator review, with bounded refinement, trace
//! recording and replay.

mod dataset;
mod episode;
mod merge;
mod replay;
mod trace;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::protocol::{build_backend, AgentRole, BackendConfig, BackendError, ChatBackend, ProtocolError};
use crate::series::{Segmentation, SeriesError};
use crate::tools::{KnowledgeStore, LocalizeParams};

pub use dataset::{DatasetRun, WindowFailure};
pub use episode::{EpisodeFailure, EpisodeRun, EpisodeState};
pub use merge::{merge_verdicts, DEFAULT_MERGE_GAP};
pub use replay::{replay_episode, verify_replay};
pub use trace::{EpisodeOutcome, EpisodeTrace, EventKind, Stage, TraceEvent};

/// Upper bound on the configurable refinement count.
pub const MAX_REFINEMENTS: usize = 16;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("tool budget exceeded: {used} call(s) made, {requested} more requested, budget {budget}")]
    ToolBudgetExceeded {
        requested: usize,
        used: usize,
        budget: usize,
    },
    #[error("{role} failed after one retry: {reason}")]
    RoleFailure { role: AgentRole, reason: String },
    #[error("{role} backend: {source}")]
    Backend {
        role: AgentRole,
        #[source]
        source: BackendError,
    },
    #[error("prompt rendering: {0}")]
    Prompt(#[from] ProtocolError),
    #[error("trace is corrupt at event {0}")]
    TraceCorrupt(usize),
    #[error("replay diverged from the recorded verdicts")]
    ReplayDiverged,
    #[error("invalid workflow configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace line {line}: {reason}")]
    Structure { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMode {
    /// Spectral residual saliency proxy.
    #[default]
    Proxy,
    /// Ask the localizer backend, falling back to the proxy on a bad reply.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub max_refinements: usize,
    pub tool_budget: usize,
    /// Roles without an entry use the heuristic backend.
    pub backends: BTreeMap<AgentRole, BackendConfig>,
    pub localization: LocalizationMode,
    pub localize: LocalizeParams,
    pub segmentation: Segmentation,
    pub detrend: bool,
    pub merge_gap: usize,
    pub execution: Execution,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            max_refinements: 2,
            tool_budget: 12,
            backends: BTreeMap::new(),
            localization: LocalizationMode::Proxy,
            localize: LocalizeParams::default(),
            segmentation: Segmentation::default(),
            detrend: true,
            merge_gap: DEFAULT_MERGE_GAP,
            execution: Execution::default(),
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if self.tool_budget == 0 {
            return Err(WorkflowError::InvalidConfig("tool budget must be >= 1".into()));
        }
        if self.max_refinements > MAX_REFINEMENTS {
            return Err(WorkflowError::InvalidConfig(format!(
                "max refinements must be <= {MAX_REFINEMENTS}"
            )));
        }
        for (role, b) in &self.backends {
            b.validate().map_err(|source| WorkflowError::Backend { role: *role, source })?;
        }
        Ok(())
    }

    /// Sets every role (including the localizer) to one backend.
    pub fn with_backend_for_all(mut self, backend: BackendConfig) -> Self {
        for role in AgentRole::ALL {
            self.backends.insert(role, backend.clone());
        }
        self
    }

    pub fn backend_for(&self, role: AgentRole) -> BackendConfig {
        self.backends.get(&role).cloned().unwrap_or_default()
    }

    fn roles(&self) -> Vec<AgentRole> {
        AgentRole::ALL
            .into_iter()
            .filter(|r| *r != AgentRole::Localizer || self.localization == LocalizationMode::Backend)
            .collect()
    }
}

/// A configured workflow with live backends and a knowledge store.
#[derive(Clone)]
pub struct Workflow {
    config: WorkflowConfig,
    agents: BTreeMap<AgentRole, Arc<dyn ChatBackend>>,
    store: Arc<KnowledgeStore>,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow")
            .field("config", &self.config)
            .field("roles", &self.agents.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Workflow {
    /// Builds one backend per distinct role configuration. Remote backends
    /// fail here when their API key is missing.
    pub fn new(config: WorkflowConfig) -> Result<Self, WorkflowError> {
        config.validate()?;
        let mut built: Vec<(BackendConfig, Arc<dyn ChatBackend>)> = Vec::new();
        let mut agents = BTreeMap::new();
        for role in config.roles() {
            let bc = config.backend_for(role);
            let backend = match built.iter().find(|(c, _)| *c == bc) {
                Some((_, b)) => Arc::clone(b),
                None => {
                    let b = build_backend(&bc).map_err(|source| WorkflowError::Backend { role, source })?;
                    built.push((bc, Arc::clone(&b)));
                    b
                }
            };
            agents.insert(role, backend);
        }
        Ok(Self {
            config,
            agents,
            store: Arc::new(KnowledgeStore::seeded()),
        })
    }

    /// Uses the same backend instance for every role.
    pub fn with_backend(config: WorkflowConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, WorkflowError> {
        config.validate()?;
        let agents = config
            .roles()
            .into_iter()
            .map(|r| (r, Arc::clone(&backend)))
            .collect();
        Ok(Self {
            config,
            agents,
            store: Arc::new(KnowledgeStore::seeded()),
        })
    }

    pub fn with_store(mut self, store: KnowledgeStore) -> Self {
        self.store = Arc::new(store);
        self
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn store(&self) -> &KnowledgeStore {
        &self.store
    }

    fn agent(&self, role: AgentRole) -> &dyn ChatBackend {
        self.agents
            .get(&role)
            .map(|b| b.as_ref())
            .expect("every active role has a backend")
    }
}
