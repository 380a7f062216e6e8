use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::trace::{EpisodeOutcome, EpisodeTrace, EventKind, TraceEvent};
use super::{Workflow, WorkflowError};
use crate::protocol::{request_digest, AgentRole, AnomalyVerdict, BackendError, ChatBackend, ChatTurn};
use crate::tools::KnowledgeStore;

struct Recorded {
    seq: usize,
    digest: String,
    reply: Option<String>,
}

/// Serves one role's recorded completions in order, checking each request
/// digest against the recording.
struct TraceBackend {
    model: String,
    temperature: f64,
    queue: Mutex<VecDeque<Recorded>>,
    corrupt: Arc<Mutex<Option<usize>>>,
}

impl TraceBackend {
    fn flag(&self, seq: usize) {
        let mut c = self.corrupt.lock().expect("corrupt flag lock");
        if c.is_none_or(|old| seq < old) {
            *c = Some(seq);
        }
    }
}

impl ChatBackend for TraceBackend {
    fn identity(&self) -> (&str, f64) {
        (&self.model, self.temperature)
    }

    fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError> {
        let next = self.queue.lock().expect("replay queue lock").pop_front();
        let Some(rec) = next else {
            self.flag(usize::MAX);
            return Err(BackendError::ReplayMiss("recorded exchanges exhausted".into()));
        };
        let digest = request_digest(&self.model, self.temperature, messages);
        if !rec.digest.is_empty() && rec.digest != digest {
            self.flag(rec.seq);
            return Err(BackendError::ReplayMiss(digest));
        }
        match rec.reply {
            Some(r) => Ok(r),
            None => Err(BackendError::Transport(format!(
                "recorded backend failure at event {}",
                rec.seq
            ))),
        }
    }
}

fn comparable(e: &TraceEvent) -> serde_json::Value {
    serde_json::json!({
        "seq": e.seq,
        "iteration": e.iteration,
        "stage": e.stage,
        "kind": e.kind,
    })
}

/// Re-runs a recorded episode offline: completions come from the trace,
/// tools run again. Any disagreement with the recording is reported as
/// `TraceCorrupt` with the first offending event index.
pub fn replay_episode(trace: &EpisodeTrace) -> Result<Vec<AnomalyVerdict>, WorkflowError> {
    if trace.events.is_empty() {
        return Err(WorkflowError::TraceCorrupt(0));
    }
    let corrupt = Arc::new(Mutex::new(None));
    let mut queues: BTreeMap<AgentRole, (String, f64, VecDeque<Recorded>)> = BTreeMap::new();
    for e in &trace.events {
        if let EventKind::Complete {
            role,
            model,
            temperature,
            digest,
            reply,
            ..
        } = &e.kind
        {
            let entry = queues
                .entry(*role)
                .or_insert_with(|| (model.clone(), *temperature, VecDeque::new()));
            if entry.0 != *model || entry.1.to_bits() != temperature.to_bits() {
                return Err(WorkflowError::TraceCorrupt(e.seq));
            }
            entry.2.push_back(Recorded {
                seq: e.seq,
                digest: digest.clone(),
                reply: reply.clone(),
            });
        }
    }

    let mut backends: BTreeMap<AgentRole, Arc<TraceBackend>> = BTreeMap::new();
    let mut agents: BTreeMap<AgentRole, Arc<dyn ChatBackend>> = BTreeMap::new();
    for role in trace.config.roles() {
        let (model, temperature, queue) = queues.remove(&role).unwrap_or_default();
        let b = Arc::new(TraceBackend {
            model,
            temperature,
            queue: Mutex::new(queue),
            corrupt: Arc::clone(&corrupt),
        });
        agents.insert(role, b.clone() as Arc<dyn ChatBackend>);
        backends.insert(role, b);
    }
    // Completions from a role the config does not run.
    if let Some(first) = queues.values().filter_map(|q| q.2.front()).map(|r| r.seq).min() {
        return Err(WorkflowError::TraceCorrupt(first));
    }

    let wf = Workflow {
        config: trace.config.clone(),
        agents,
        store: Arc::new(KnowledgeStore::seeded()),
    };
    let (verdicts, rerun) = match wf.run_episode(&trace.window) {
        Ok(run) => (Some(run.verdicts), run.trace),
        Err(f) => (None, f.trace),
    };

    if let Some(seq) = *corrupt.lock().expect("corrupt flag lock") {
        return Err(WorkflowError::TraceCorrupt(seq.min(trace.events.len())));
    }
    let leftover = backends
        .values()
        .filter_map(|b| b.queue.lock().expect("replay queue lock").front().map(|r| r.seq))
        .min();
    if let Some(seq) = leftover {
        return Err(WorkflowError::TraceCorrupt(seq));
    }
    let n = trace.events.len().max(rerun.events.len());
    for i in 0..n {
        match (trace.events.get(i), rerun.events.get(i)) {
            (Some(a), Some(b)) if comparable(a) == comparable(b) => {}
            _ => return Err(WorkflowError::TraceCorrupt(i)),
        }
    }

    match (verdicts, &trace.outcome) {
        (Some(v), EpisodeOutcome::Completed | EpisodeOutcome::ShortCircuited) => Ok(v),
        (None, EpisodeOutcome::Failed { .. }) => Ok(Vec::new()),
        _ => Err(WorkflowError::ReplayDiverged),
    }
}

/// Replays and checks the result against the recorded final verdicts.
pub fn verify_replay(trace: &EpisodeTrace) -> Result<Vec<AnomalyVerdict>, WorkflowError> {
    let verdicts = replay_episode(trace)?;
    let same = serde_json::to_value(&verdicts).ok() == serde_json::to_value(&trace.final_verdicts).ok();
    if same {
        Ok(verdicts)
    } else {
        Err(WorkflowError::ReplayDiverged)
    }
}
