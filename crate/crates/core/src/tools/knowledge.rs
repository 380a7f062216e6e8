use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ToolPayload, ToolResult};

const DEFAULT_STORE: &str = include_str!("../../knowledge/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    AnomalyType,
    Domain,
    ToolSemantics,
}

impl KnowledgeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anomaly_type" => Some(Self::AnomalyType),
            "domain" => Some(Self::Domain),
            "tool_semantics" => Some(Self::ToolSemantics),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub kind: KnowledgeKind,
    #[serde(default)]
    pub tags: Vec<String>,
    pub body: String,
}

/// Immutable, id-ordered record store.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    records: Vec<KnowledgeRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("duplicate knowledge id `{0}`")]
    DuplicateId(String),
    #[error("knowledge file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KnowledgeStore {
    pub fn new(mut records: Vec<KnowledgeRecord>) -> Result<Self, KnowledgeError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(KnowledgeError::DuplicateId(w[0].id.clone()));
        }
        Ok(Self { records })
    }

    /// The seeded store: anomaly types, one domain note per synthetic base,
    /// and one semantics record per registered tool.
    pub fn seeded() -> Self {
        Self::from_json(DEFAULT_STORE).expect("bundled knowledge store is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn records(&self) -> &[KnowledgeRecord] {
        &self.records
    }

    /// Ids of the anomaly-type records, which form the verdict taxonomy.
    pub fn taxonomy(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.kind == KnowledgeKind::AnomalyType)
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn query(&self, tags: &[String], kind: Option<KnowledgeKind>) -> Vec<KnowledgeRecord> {
        self.records
            .iter()
            .filter(|r| kind.is_none_or(|k| r.kind == k))
            .filter(|r| tags.iter().all(|t| r.tags.iter().any(|rt| rt == t)))
            .cloned()
            .collect()
    }
}

/// Records carrying every tag (and the kind, if given), ordered by id.
pub fn query_knowledge(
    store: &KnowledgeStore,
    tags: &[String],
    kind: Option<KnowledgeKind>,
) -> ToolResult {
    ToolResult::new(
        "query_knowledge",
        None,
        ToolPayload::Knowledge(store.query(tags, kind)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(r: &ToolResult) -> Vec<String> {
        match &r.payload {
            ToolPayload::Knowledge(v) => v.iter().map(|r| r.id.clone()).collect(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn seeded_contents() {
        let s = KnowledgeStore::seeded();
        assert_eq!(
            s.taxonomy().into_iter().collect::<Vec<_>>(),
            vec![
                "pattern_contextual",
                "pattern_seasonal",
                "pattern_shapelet",
                "pattern_trend",
                "point_global"
            ]
        );
        let tools = s.query(&[], Some(KnowledgeKind::ToolSemantics));
        assert_eq!(tools.len(), super::super::TOOL_NAMES.len());
        assert_eq!(s.query(&[], Some(KnowledgeKind::Domain)).len(), 3);
    }

    #[test]
    fn query_examples() {
        let s = KnowledgeStore::seeded();
        let r = query_knowledge(&s, &["point_global".into()], Some(KnowledgeKind::AnomalyType));
        assert_eq!(records(&r), vec!["point_global"]);
        assert!(records(&query_knowledge(&s, &["nonexistent".into()], None)).is_empty());
        let all = records(&query_knowledge(&s, &[], Some(KnowledgeKind::ToolSemantics)));
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn and_semantics() {
        let s = KnowledgeStore::seeded();
        let both = s.query(&["pattern".into(), "trend".into()], None);
        assert_eq!(both.len(), 1);
        assert_eq!(both[0].id, "pattern_trend");
        // Pure function of its inputs.
        assert_eq!(both, s.query(&["pattern".into(), "trend".into()], None));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"[{"id":"a","kind":"domain","tags":[],"body":"x"},
                       {"id":"a","kind":"domain","tags":[],"body":"y"}]"#;
        assert!(matches!(
            KnowledgeStore::from_json(text),
            Err(KnowledgeError::DuplicateId(_))
        ));
    }
}
