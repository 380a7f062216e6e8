use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{check_messages, BackendError, ChatBackend};
use crate::protocol::{AgentRole, ChatTurn};

/// One line of a replay fixture.
///
/// Entries normally carry the request `digest`. Scripted fixtures may key a
/// reply by `role` instead; role-keyed replies are served in file order and
/// the last one repeats once the queue is drained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub reply: String,
}

impl ReplayEntry {
    pub fn for_digest(digest: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            digest: Some(digest.into()),
            role: None,
            model: None,
            temperature: None,
            reply: reply.into(),
        }
    }

    pub fn for_role(role: AgentRole, reply: impl Into<String>) -> Self {
        Self {
            digest: None,
            role: Some(role),
            model: None,
            temperature: None,
            reply: reply.into(),
        }
    }
}

#[derive(Default)]
struct Store {
    by_digest: HashMap<String, VecDeque<String>>,
    by_role: HashMap<AgentRole, (VecDeque<String>, Option<String>)>,
}

/// Serves recorded replies. Lookups are serialized behind one lock.
pub struct ReplayBackend {
    model: String,
    temperature: f64,
    store: Mutex<Store>,
}

impl ReplayBackend {
    pub fn new(model: &str, temperature: f64, entries: Vec<ReplayEntry>) -> Self {
        let mut store = Store::default();
        for e in entries {
            if let Some(d) = e.digest {
                store.by_digest.entry(d).or_default().push_back(e.reply);
            } else if let Some(r) = e.role {
                store.by_role.entry(r).or_default().0.push_back(e.reply);
            }
        }
        Self {
            model: model.to_string(),
            temperature,
            store: Mutex::new(store),
        }
    }

    /// Reads a JSONL fixture. With an empty `model`, the model and
    /// temperature recorded in the file (if any) are adopted so digests line
    /// up with the recording.
    pub fn load(path: &Path, model: &str, temperature: f64) -> Result<Self, BackendError> {
        let file = File::open(path).map_err(|e| {
            BackendError::Unavailable(format!("replay file {}: {e}", path.display()))
        })?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Unavailable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::InvalidConfig(format!("replay line {}: {e}", i + 1))
            })?;
            entries.push(entry);
        }
        let (model, temperature) = match entries.iter().find(|e| e.model.is_some()) {
            Some(e) if model.is_empty() => (
                e.model.clone().unwrap_or_default(),
                e.temperature.unwrap_or(temperature),
            ),
            _ => (model.to_string(), temperature),
        };
        Ok(Self::new(&model, temperature, entries))
    }
}

impl ChatBackend for ReplayBackend {
    fn identity(&self) -> (&str, f64) {
        (&self.model, self.temperature)
    }

    fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError> {
        check_messages(messages)?;
        let digest = self.digest(messages);
        let mut store = self.store.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reply) = store.by_digest.get_mut(&digest).and_then(VecDeque::pop_front) {
            return Ok(reply);
        }
        if let Some((queue, last)) =
            AgentRole::of_messages(messages).and_then(|r| store.by_role.get_mut(&r))
        {
            if let Some(reply) = queue.pop_front() {
                *last = Some(reply.clone());
                return Ok(reply);
            }
            if let Some(reply) = last {
                return Ok(reply.clone());
            }
        }
        Err(BackendError::ReplayMiss(digest))
    }
}

/// Forwards to an inner backend and appends every exchange to a JSONL
/// fixture that [`ReplayBackend`] can serve.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    sink: Mutex<BufWriter<File>>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn ChatBackend>, path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }
}

impl ChatBackend for RecordingBackend {
    fn identity(&self) -> (&str, f64) {
        self.inner.identity()
    }

    fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError> {
        let reply = self.inner.complete(messages)?;
        let (model, temperature) = self.inner.identity();
        let entry = ReplayEntry {
            digest: Some(self.inner.digest(messages)),
            role: None,
            model: Some(model.to_string()),
            temperature: Some(temperature),
            reply: reply.clone(),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(sink, "{line}")
            .and_then(|_| sink.flush())
            .map_err(|e| BackendError::Transport(format!("recording: {e}")))?;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{request_digest, HeuristicBackend};
    use super::*;

    fn msgs(text: &str) -> Vec<ChatTurn> {
        vec![ChatTurn::user(text)]
    }

    #[test]
    fn digest_match_and_miss() {
        let m = msgs("[role: actor]\nplan");
        let d = request_digest("m", 0.7, &m);
        let b = ReplayBackend::new("m", 0.7, vec![ReplayEntry::for_digest(&d, "recorded")]);
        assert_eq!(b.complete(&m).unwrap(), "recorded");
        assert_eq!(b.complete(&m), Err(BackendError::ReplayMiss(d)));
        let other = msgs("[role: actor]\nother");
        assert!(matches!(b.complete(&other), Err(BackendError::ReplayMiss(_))));
    }

    #[test]
    fn repeated_digest_is_served_in_order() {
        let m = msgs("[role: detector]\nx");
        let d = request_digest("m", 0.7, &m);
        let b = ReplayBackend::new(
            "m",
            0.7,
            vec![ReplayEntry::for_digest(&d, "a"), ReplayEntry::for_digest(&d, "b")],
        );
        assert_eq!(b.complete(&m).unwrap(), "a");
        assert_eq!(b.complete(&m).unwrap(), "b");
    }

    #[test]
    fn role_entries_repeat_last() {
        let b = ReplayBackend::new(
            "m",
            0.7,
            vec![
                ReplayEntry::for_role(AgentRole::Evaluator, "one"),
                ReplayEntry::for_role(AgentRole::Evaluator, "two"),
            ],
        );
        let m = msgs("[role: evaluator]\nx");
        assert_eq!(b.complete(&m).unwrap(), "one");
        assert_eq!(b.complete(&m).unwrap(), "two");
        assert_eq!(b.complete(&m).unwrap(), "two");
        assert!(b.complete(&msgs("[role: actor]\nx")).is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let inner: Arc<dyn ChatBackend> = Arc::new(HeuristicBackend::new());
        let rec = RecordingBackend::create(inner, &path).unwrap();
        let m = msgs("[role: evaluator]\n### Review round\nReview round: 1\n### Detector result\n[]\n### Tool results\n");
        let live = rec.complete(&m).unwrap();
        drop(rec);
        let replay = ReplayBackend::load(&path, "", 0.0).unwrap();
        assert_eq!(replay.identity(), (HeuristicBackend::MODEL, 0.7));
        assert_eq!(replay.complete(&m).unwrap(), live);
    }
}
