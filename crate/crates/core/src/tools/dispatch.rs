use std::collections::BTreeMap;

use super::{
    diff_zscore, global_structure, local_structure, query_knowledge, stat_features,
    KnowledgeKind, KnowledgeStore, ParamValue, Scope, ToolCall, ToolError, ToolResult,
};
use crate::series::Window;

/// Registered tool names, as agents must spell them.
pub const TOOL_NAMES: [&str; 5] = [
    "stat_features",
    "diff_zscore",
    "global_structure",
    "local_structure",
    "query_knowledge",
];

pub const DEFAULT_RADIUS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 3.0;

/// What a tool call may read.
#[derive(Debug, Clone, Copy)]
pub struct ToolContext<'a> {
    pub window: &'a Window,
    pub store: &'a KnowledgeStore,
}

fn allowed_params(tool: &str) -> Option<&'static [&'static str]> {
    Some(match tool {
        "stat_features" | "global_structure" => &["start", "end"],
        "diff_zscore" => &["scope", "radius", "threshold", "start", "end"],
        "local_structure" => &["start", "end"],
        "query_knowledge" => &["tags", "kind"],
        _ => return None,
    })
}

/// Routes a call to its tool.
pub fn dispatch(call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult, ToolError> {
    let allowed =
        allowed_params(&call.tool).ok_or_else(|| ToolError::UnknownTool(call.tool.clone()))?;
    let params = Params {
        tool: &call.tool,
        map: &call.params,
    };
    if let Some(bad) = call.params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(params.invalid(format!("unknown parameter `{bad}`")));
    }

    match call.tool.as_str() {
        "stat_features" => stat_features(&params.range(ctx.window, false)?),
        "diff_zscore" => {
            let scope = match params.text("scope")? {
                None => Scope::Global,
                Some(s) => parse_scope(s).ok_or_else(|| {
                    params.invalid(format!("scope must be `local` or `global`, got `{s}`"))
                })?,
            };
            let radius = params.count("radius")?.unwrap_or(DEFAULT_RADIUS);
            let threshold = params.number("threshold")?.unwrap_or(DEFAULT_THRESHOLD);
            diff_zscore(&params.range(ctx.window, false)?, scope, radius, threshold)
        }
        "global_structure" => global_structure(&params.range(ctx.window, false)?),
        "local_structure" => {
            let sub = params.range(ctx.window, true)?;
            let from = sub.start - ctx.window.start;
            local_structure(ctx.window, from, from + sub.len())
        }
        "query_knowledge" => {
            let tags: Vec<String> = params
                .text("tags")?
                .map(|t| {
                    t.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default();
            let kind = match params.text("kind")? {
                None => None,
                Some(k) => Some(
                    KnowledgeKind::parse(k)
                        .ok_or_else(|| params.invalid(format!("unknown kind `{k}`")))?,
                ),
            };
            Ok(query_knowledge(ctx.store, &tags, kind))
        }
        _ => unreachable!("registry and router disagree"),
    }
}

pub fn parse_scope(s: &str) -> Option<Scope> {
    match s {
        "global" => Some(Scope::Global),
        "local" => Some(Scope::Local),
        _ => None,
    }
}

/// One line per tool, taken from the store's tool-semantics records.
pub fn tool_catalog(store: &KnowledgeStore) -> String {
    TOOL_NAMES
        .iter()
        .map(|name| {
            let body = store
                .records()
                .iter()
                .find(|r| r.kind == KnowledgeKind::ToolSemantics && r.tags.iter().any(|t| t == name))
                .map(|r| r.body.as_str())
                .unwrap_or("");
            format!("- {name}: {body}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

struct Params<'a> {
    tool: &'a str,
    map: &'a BTreeMap<String, ParamValue>,
}

impl Params<'_> {
    fn invalid(&self, reason: String) -> ToolError {
        ToolError::ParamValidation {
            tool: self.tool.to_string(),
            reason,
        }
    }

    fn text(&self, key: &str) -> Result<Option<&str>, ToolError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| self.invalid(format!("`{key}` must be text"))),
        }
    }

    fn number(&self, key: &str) -> Result<Option<f64>, ToolError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| self.invalid(format!("`{key}` must be a number"))),
        }
    }

    fn index(&self, key: &str) -> Result<Option<usize>, ToolError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_i64()
                .filter(|i| *i >= 0)
                .map(|i| Some(i as usize))
                .ok_or_else(|| self.invalid(format!("`{key}` must be a non-negative integer"))),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ToolError> {
        self.index(key)
    }

    /// Sub-window for absolute inclusive `start`/`end`, defaulting to the
    /// whole window unless `required`.
    fn range(&self, window: &Window, required: bool) -> Result<Window, ToolError> {
        let start = self.index("start")?;
        let end = self.index("end")?;
        if required && (start.is_none() || end.is_none()) {
            return Err(self.invalid("`start` and `end` are required".into()));
        }
        let start = start.unwrap_or(window.start);
        let end = end.unwrap_or(window.last());
        if start > end || start < window.start || end > window.last() {
            return Err(ToolError::IntervalOutOfBounds {
                start,
                end: end + 1,
                len: window.end,
            });
        }
        Ok(window.slice(start - window.start, end + 1 - window.start))
    }
}
