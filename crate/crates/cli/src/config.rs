//! Run settings from a `key = value` file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use tsagent_core::exec::Execution;
use tsagent_core::protocol::{AgentRole, BackendConfig, BackendKind};
use tsagent_core::series::Segmentation;
use tsagent_core::workflow::{LocalizationMode, WorkflowConfig};

use crate::CliError;

/// Everything `detect` needs. Unset fields take the workflow defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub role_backends: BTreeMap<AgentRole, BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<u64>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub max_refinements: Option<usize>,
    pub tool_budget: Option<usize>,
    pub window_length: Option<usize>,
    pub window_step: Option<usize>,
    pub min_tail: Option<usize>,
    pub workers: Option<usize>,
    pub sequential: Option<bool>,
    pub localization: Option<LocalizationMode>,
    pub plot: Option<bool>,
    pub min_confidence: Option<u8>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| bad(line, format!("`{key}` expects a number, got `{v}`")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(line, format!("`{key}` expects true or false, got `{v}`"))),
    }
}

pub fn parse_backend_kind(v: &str) -> Result<BackendKind, String> {
    BackendKind::parse(v).ok_or_else(|| format!("unknown backend `{v}` (heuristic, remote, replay)"))
}

pub fn parse_localization(v: &str) -> Result<LocalizationMode, String> {
    match v {
        "proxy" => Ok(LocalizationMode::Proxy),
        "backend" => Ok(LocalizationMode::Backend),
        _ => Err(format!("unknown localization `{v}` (proxy, backend)")),
    }
}

/// `role=kind`, as taken by `--role-backend`.
pub fn parse_role_backend(v: &str) -> Result<(AgentRole, BackendKind), String> {
    let (role, kind) = v.split_once('=').ok_or_else(|| format!("expected role=backend, got `{v}`"))?;
    let role = AgentRole::parse(role.trim()).ok_or_else(|| format!("unknown role `{}`", role.trim()))?;
    Ok((role, parse_backend_kind(kind.trim())?))
}

impl RunConfig {
    /// Parses the `key = value` format. Blank lines and `#` comments are
    /// skipped; `-` and `_` are interchangeable in keys; `input` may repeat.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(n, format!("expected key = value, got `{line}`")))?;
            let key = key.trim().replace('-', "_");
            let v = value.trim();
            match key.as_str() {
                "input" => c.inputs.push(PathBuf::from(v)),
                "out" => c.out = Some(PathBuf::from(v)),
                "backend" => c.backend = Some(parse_backend_kind(v).map_err(|e| bad(n, e))?),
                "endpoint" => c.endpoint = Some(v.to_string()),
                "model" => c.model = Some(v.to_string()),
                "temperature" => c.temperature = Some(parse_num(n, &key, v)?),
                "timeout_secs" => c.timeout_secs = Some(parse_num(n, &key, v)?),
                "replay" => c.replay = Some(PathBuf::from(v)),
                "record" => c.record = Some(PathBuf::from(v)),
                "max_refinements" => c.max_refinements = Some(parse_num(n, &key, v)?),
                "tool_budget" => c.tool_budget = Some(parse_num(n, &key, v)?),
                "window_length" => c.window_length = Some(parse_num(n, &key, v)?),
                "window_step" => c.window_step = Some(parse_num(n, &key, v)?),
                "min_tail" => c.min_tail = Some(parse_num(n, &key, v)?),
                "workers" => c.workers = Some(parse_num(n, &key, v)?),
                "sequential" => c.sequential = Some(parse_bool(n, &key, v)?),
                "localization" => c.localization = Some(parse_localization(v).map_err(|e| bad(n, e))?),
                "plot" => c.plot = Some(parse_bool(n, &key, v)?),
                "min_confidence" => c.min_confidence = Some(parse_num(n, &key, v)?),
                k => match k.strip_prefix("backend.") {
                    Some(role) => {
                        let role = AgentRole::parse(role).ok_or_else(|| bad(n, format!("unknown role `{role}`")))?;
                        c.role_backends.insert(role, parse_backend_kind(v).map_err(|e| bad(n, e))?);
                    }
                    None => return Err(bad(n, format!("unknown key `{k}`"))),
                },
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fields set in `flags` win over `self`.
    pub fn overridden_by(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            out, backend, endpoint, model, temperature, timeout_secs, replay, record,
            max_refinements, tool_budget, window_length, window_step, min_tail, workers,
            sequential, localization, plot, min_confidence
        );
        if !flags.inputs.is_empty() {
            self.inputs = flags.inputs;
        }
        self.role_backends.extend(flags.role_backends);
        self
    }

    fn backend_of(&self, kind: BackendKind) -> BackendConfig {
        let mut b = match kind {
            BackendKind::Heuristic => BackendConfig::heuristic(),
            BackendKind::Remote => BackendConfig {
                kind: BackendKind::Remote,
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                ..BackendConfig::heuristic()
            },
            BackendKind::Replay => BackendConfig {
                kind: BackendKind::Replay,
                replay_path: self.replay.clone(),
                model: self.model.clone(),
                ..BackendConfig::heuristic()
            },
        };
        if let Some(t) = self.temperature {
            b.temperature = t;
        }
        if let Some(s) = self.timeout_secs {
            b.timeout = Duration::from_secs(s);
        }
        b
    }

    /// Backend kind each role ends up with.
    pub fn kinds(&self) -> BTreeMap<AgentRole, BackendKind> {
        AgentRole::ALL
            .into_iter()
            .map(|r| {
                let k = self
                    .role_backends
                    .get(&r)
                    .copied()
                    .or(self.backend)
                    .unwrap_or(BackendKind::Heuristic);
                (r, k)
            })
            .collect()
    }

    pub fn workflow_config(&self) -> Result<WorkflowConfig, CliError> {
        let defaults = WorkflowConfig::default();
        let seg = Segmentation {
            length: self.window_length.unwrap_or(defaults.segmentation.length),
            step: self.window_step.unwrap_or(defaults.segmentation.step),
            min_tail: self.min_tail.unwrap_or(defaults.segmentation.min_tail),
        };
        if seg.length == 0 || seg.step == 0 {
            return Err(CliError::Config("window length and step must be >= 1".into()));
        }
        let execution = if self.sequential == Some(true) {
            Execution::Sequential
        } else {
            Execution::parallel(self.workers)
        };
        let backends = self
            .kinds()
            .into_iter()
            .map(|(r, k)| (r, self.backend_of(k)))
            .collect();
        let wc = WorkflowConfig {
            max_refinements: self.max_refinements.unwrap_or(defaults.max_refinements),
            tool_budget: self.tool_budget.unwrap_or(defaults.tool_budget),
            backends,
            localization: self.localization.unwrap_or_default(),
            segmentation: seg,
            execution,
            ..defaults
        };
        if let Some(c) = self.min_confidence {
            if !(1..=3).contains(&c) {
                return Err(CliError::Config(format!("min confidence must be 1..=3, got {c}")));
            }
        }
        Ok(wc)
    }
}
