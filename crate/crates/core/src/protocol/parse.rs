use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use super::{
    AnomalyVerdict, EvaluatorReport, LocatorPlan, ProtocolError, QualityMetrics, Rating,
};
use crate::tools::{ParamValue, ToolCall, TOOL_NAMES};

static FENCED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").unwrap());
static GE_RULE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s*(?:>=|≥|=>)\s*(-?\d+(?:\.\d+)?)").unwrap()
});
static NAMED_THRESHOLD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[^=\w])([A-Za-z_][A-Za-z0-9_]*)\s+threshold\s*(?:of\s+|=\s*|:\s*)?(-?\d+(?:\.\d+)?)")
        .unwrap()
});
static TOOL_THRESHOLD: LazyLock<Regex> = LazyLock::new(|| {
    let names = TOOL_NAMES.join("|");
    Regex::new(&format!(
        r"\b({names})\b[^\n]*?\bthreshold\s*(?:of\s+|=\s*|:\s*)?(-?\d+(?:\.\d+)?)"
    ))
    .unwrap()
});

/// Text of the innermost `<tag>...</tag>` pair: the last opening tag before
/// the first closing tag. Tag matching ignores ASCII case.
fn innermost<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let lower = text.to_ascii_lowercase();
    let open = format!("<{}>", tag.to_ascii_lowercase());
    let close = format!("</{}>", tag.to_ascii_lowercase());
    let end = lower.find(&close)?;
    let start = lower[..end].rfind(&open)? + open.len();
    Some(&text[start..end])
}

/// Removes every closed `<think>...</think>` block. A closing tag with no
/// opener drops everything before it.
pub fn strip_think(reply: &str) -> String {
    let mut rest = reply.to_string();
    loop {
        let lower = rest.to_ascii_lowercase();
        let Some(close) = lower.find("</think>") else {
            break;
        };
        let cut_from = lower[..close].rfind("<think>").unwrap_or(0);
        rest.replace_range(cut_from..close + "</think>".len(), "");
    }
    rest
}

pub fn parse_locator_plan(reply: &str) -> Result<LocatorPlan, ProtocolError> {
    let plan = innermost(reply, "Plan")
        .ok_or(ProtocolError::MissingPlanTag)?
        .trim()
        .to_string();
    if plan.is_empty() {
        return Err(ProtocolError::EmptyPlan);
    }
    let think = innermost(reply, "think").unwrap_or("").trim().to_string();
    Ok(LocatorPlan {
        declared_thresholds: harvest_thresholds(&plan),
        think,
        plan,
    })
}

fn harvest_thresholds(plan: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for re in [&*NAMED_THRESHOLD, &*TOOL_THRESHOLD, &*GE_RULE] {
        for c in re.captures_iter(plan) {
            if let Ok(v) = c[2].parse::<f64>() {
                out.entry(c[1].to_string()).or_insert(v);
            }
        }
    }
    out
}

/// Every JSON value of the wanted shape that starts somewhere in `text`,
/// in order of position.
fn json_values(text: &str, open: char) -> impl Iterator<Item = Value> + '_ {
    text.char_indices()
        .filter(move |&(_, c)| c == open)
        .filter_map(move |(i, _)| {
            serde_json::Deserializer::from_str(&text[i..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}

/// Fenced blocks first, then the whole text.
fn search_regions(text: &str) -> Vec<&str> {
    let mut regions: Vec<&str> = FENCED
        .captures_iter(text)
        .map(|c| c.get(1).unwrap().as_str())
        .collect();
    regions.push(text);
    regions
}

/// The first JSON array that is empty or holds only objects, falling back to
/// the first array of any shape.
fn first_record_array(text: &str) -> Option<Vec<Value>> {
    let mut fallback = None;
    for region in search_regions(text) {
        for v in json_values(region, '[') {
            let Value::Array(items) = v else { continue };
            if items.iter().all(Value::is_object) {
                return Some(items);
            }
            fallback.get_or_insert(items);
        }
    }
    fallback
}

fn first_object(text: &str) -> Option<Map<String, Value>> {
    search_regions(text)
        .into_iter()
        .flat_map(|r| json_values(r, '{'))
        .find_map(|v| match v {
            Value::Object(m) => Some(m),
            _ => None,
        })
}

/// Tool calls from a fenced (or bare) JSON array of `{tool, params}`
/// objects. Any malformed entry rejects the whole batch.
pub fn parse_actor_calls(reply: &str) -> Result<Vec<ToolCall>, ProtocolError> {
    let text = strip_think(reply);
    let items = first_record_array(&text).ok_or(ProtocolError::NoCallsFound)?;
    if items.is_empty() {
        return Err(ProtocolError::NoCallsFound);
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_call(item).ok_or(ProtocolError::MalformedCall(i)))
        .collect()
}

fn parse_call(item: &Value) -> Option<ToolCall> {
    let obj = item.as_object()?;
    if obj.keys().any(|k| k != "tool" && k != "params") {
        return None;
    }
    let tool = obj.get("tool")?.as_str()?.trim();
    if tool.is_empty() {
        return None;
    }
    let mut call = ToolCall::new(tool);
    match obj.get("params") {
        None | Some(Value::Null) => {}
        Some(Value::Object(params)) => {
            for (k, v) in params {
                let value = match v {
                    Value::Number(n) => match n.as_i64() {
                        Some(i) => ParamValue::Int(i),
                        None => ParamValue::Number(n.as_f64()?),
                    },
                    Value::String(s) => ParamValue::Text(s.clone()),
                    _ => return None,
                };
                call.params.insert(k.clone(), value);
            }
        }
        Some(_) => return None,
    }
    Some(call)
}

const VERDICT_FIELDS: [&str; 4] = ["interval", "type", "explanation", "confidence"];

pub fn parse_detector_verdicts(reply: &str) -> Result<Vec<AnomalyVerdict>, ProtocolError> {
    let text = strip_think(reply);
    let items = first_record_array(&text).ok_or(ProtocolError::NoJsonArray)?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_verdict(i, item))
        .collect()
}

fn parse_verdict(i: usize, item: &Value) -> Result<AnomalyVerdict, ProtocolError> {
    let invalid = |f: &str| ProtocolError::FieldInvalid(i, f.to_string());
    let obj = item.as_object().ok_or_else(|| invalid("element"))?;
    if let Some(f) = VERDICT_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(ProtocolError::FieldMissing(i, f.to_string()));
    }

    let bounds: Vec<u64> = obj["interval"]
        .as_array()
        .filter(|a| a.len() == 2)
        .and_then(|a| a.iter().map(Value::as_u64).collect())
        .ok_or_else(|| invalid("interval"))?;
    if bounds[0] > bounds[1] {
        return Err(invalid("interval"));
    }
    let kind = obj["type"].as_str().ok_or_else(|| invalid("type"))?;
    let explanation = obj["explanation"]
        .as_str()
        .ok_or_else(|| invalid("explanation"))?;
    let confidence = match &obj["confidence"] {
        Value::Number(n) => match n.as_u64() {
            Some(c @ 1..=3) => c as u8,
            _ => return Err(ProtocolError::ConfidenceOutOfRange(i)),
        },
        _ => return Err(invalid("confidence")),
    };
    Ok(AnomalyVerdict {
        interval: [bounds[0] as usize, bounds[1] as usize],
        kind: kind.to_string(),
        explanation: explanation.to_string(),
        confidence,
    })
}

const REPORT_KEYS: [&str; 4] = ["issues", "suggestions", "needs_refinement", "quality_metrics"];
const QUALITY_KEYS: [&str; 3] = ["planning", "tool_usage", "reasoning"];

pub fn parse_evaluator_report(reply: &str) -> Result<EvaluatorReport, ProtocolError> {
    let text = strip_think(reply);
    let obj = first_object(&text).ok_or(ProtocolError::NoJsonObject)?;
    if let Some(k) = REPORT_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(ProtocolError::KeyMissing(k.to_string()));
    }
    let issues = text_list(&obj["issues"]).ok_or(ProtocolError::BadValue("issues".into()))?;
    let suggestions =
        text_list(&obj["suggestions"]).ok_or(ProtocolError::BadValue("suggestions".into()))?;
    let needs_refinement = obj["needs_refinement"]
        .as_bool()
        .ok_or(ProtocolError::BadValue("needs_refinement".into()))?;
    let quality = obj["quality_metrics"]
        .as_object()
        .ok_or(ProtocolError::BadValue("quality_metrics".into()))?;
    let mut ratings = [Rating::Good; 3];
    for (slot, key) in ratings.iter_mut().zip(QUALITY_KEYS) {
        let value = quality
            .get(key)
            .ok_or_else(|| ProtocolError::KeyMissing(format!("quality_metrics.{key}")))?;
        *slot = value
            .as_str()
            .and_then(Rating::parse)
            .ok_or_else(|| ProtocolError::BadRating(key.to_string()))?;
    }
    Ok(EvaluatorReport {
        issues,
        suggestions,
        needs_refinement,
        quality_metrics: QualityMetrics {
            planning: ratings[0],
            tool_usage: ratings[1],
            reasoning: ratings[2],
        },
    })
}

/// A list of strings, or a single string treated as a one-item list.
fn text_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) if s.trim().is_empty() => Some(Vec::new()),
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items.iter().map(|x| x.as_str().map(String::from)).collect(),
        _ => None,
    }
}
