//! Deterministic rule-based stand-in for the chat model.
//!
//! The policy reads only the rendered prompt: the role header, the
//! `### ` sections, and the fixed-format tool summary lines.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde_json::json;

use super::{check_messages, BackendError, ChatBackend, DEFAULT_TEMPERATURE};
use crate::numeric::quantile_sorted;
use crate::tools::{proxy_candidates, LocalizeParams};
use crate::protocol::{parse_detector_verdicts, AgentRole, AnomalyVerdict, ChatRole, ChatTurn};

/// Global difference Z threshold the plan declares.
const Z_THRESHOLD: f64 = 3.0;
/// Context deviation at which a candidate counts as supported.
const CONTEXT_THRESHOLD: f64 = 3.0;
/// Total rise over an interval (in normalized units) for its slope to dominate.
const TREND_RISE: f64 = 0.25;
/// Unsupported verdicts re-examined per refinement round.
const MAX_RECHECKS: usize = 2;

static RANGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Index range: \[(\d+), (\d+)\]").unwrap());
static CANDIDATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^- \[(\d+), (\d+)\]").unwrap());
static UNSUPPORTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"verdict \[(\d+), (\d+)\] lacks tool support").unwrap());
static ZSCORE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^- diff_zscore\((?:global|local)\) on \[\d+, \d+\]: .*?outliers=\[([^\]]*)\]")
        .unwrap()
});
static OUTLIER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\d+):([+-]?\d+(?:\.\d+)?)").unwrap());
static LOCAL_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^- local_structure on \[(\d+), (\d+)\]: trend_slope=(\S+) context_deviation=(\S+)")
        .unwrap()
});
static GLOBAL_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?m)^- global_structure on \[\d+, \d+\]: trend_slope=\S+ dominant_period=(\S+) level_shift_index=(\S+)",
    )
    .unwrap()
});
static CALL_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*-?[ \t]*call[ \t]+([a-z_]+)((?:[ \t]+[A-Za-z_]+=\S+)*)").unwrap()
});
static VALUE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^(\d+),(\S+)$").unwrap());
static ROUND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Review round: (\d+)").unwrap());

/// Rule-based policy for every role. Identical messages always produce
/// identical replies.
#[derive(Debug, Clone)]
pub struct HeuristicBackend {
    temperature: f64,
}

impl Default for HeuristicBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HeuristicBackend {
    pub const MODEL: &'static str = "heuristic-v1";

    pub fn new() -> Self {
        Self::with_temperature(DEFAULT_TEMPERATURE)
    }

    /// Temperature only affects request digests; the policy ignores it.
    pub fn with_temperature(temperature: f64) -> Self {
        Self { temperature }
    }
}

impl ChatBackend for HeuristicBackend {
    fn identity(&self) -> (&str, f64) {
        (Self::MODEL, self.temperature)
    }

    fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError> {
        check_messages(messages)?;
        let prompt = messages
            .iter()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let role = AgentRole::of_prompt(prompt).ok_or_else(|| {
            BackendError::Unavailable("heuristic policy cannot identify the prompt role".into())
        })?;
        let p = Prompt::new(prompt);
        Ok(match role {
            AgentRole::Localizer => localizer(&p),
            AgentRole::Locator => locator(&p),
            AgentRole::Actor => actor(&p),
            AgentRole::Detector => detector(&p),
            AgentRole::Evaluator => evaluator(&p),
        })
    }
}

/// A rendered prompt split into its `### ` sections.
struct Prompt<'a> {
    sections: BTreeMap<&'a str, &'a str>,
}

impl<'a> Prompt<'a> {
    fn new(text: &'a str) -> Self {
        let mut sections = BTreeMap::new();
        let mut rest = text;
        while let Some(pos) = rest.find("### ") {
            let after = &rest[pos + 4..];
            let line_end = after.find('\n').unwrap_or(after.len());
            let heading = after[..line_end].trim();
            let body_start = (line_end + 1).min(after.len());
            let body = &after[body_start..];
            let body_end = body.find("\n### ").map_or(body.len(), |i| i + 1);
            sections.entry(heading).or_insert(&body[..body_end]);
            rest = &body[body_end..];
        }
        Self { sections }
    }

    fn section(&self, name: &str) -> &'a str {
        self.sections.get(name).copied().unwrap_or("")
    }

    fn range(&self) -> Option<[usize; 2]> {
        let c = RANGE.captures(self.section("Series"))?;
        Some([c[1].parse().ok()?, c[2].parse().ok()?])
    }

    fn candidates(&self) -> Vec<[usize; 2]> {
        intervals(&CANDIDATE, self.section("Candidate intervals"))
    }

    fn values(&self) -> BTreeMap<usize, f64> {
        VALUE_LINE
            .captures_iter(self.section("Series"))
            .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
            .collect()
    }
}

fn intervals(re: &Regex, text: &str) -> Vec<[usize; 2]> {
    re.captures_iter(text)
        .filter_map(|c| Some([c[1].parse().ok()?, c[2].parse().ok()?]))
        .filter(|[s, e]: &[usize; 2]| s <= e)
        .collect()
}

fn fmt_interval([s, e]: [usize; 2]) -> String {
    format!("[{s}, {e}]")
}

/// Runs the saliency proxy on the values printed in the prompt.
fn localizer(p: &Prompt<'_>) -> String {
    let values = p.values();
    let Some(&first) = values.keys().next() else {
        return "[]".to_string();
    };
    let series: Vec<f64> = values.values().copied().collect();
    let found: Vec<[usize; 2]> = proxy_candidates(&series, &LocalizeParams::default())
        .iter()
        .map(|c| [first + c.start, first + c.end - 1])
        .collect();
    serde_json::to_string(&found).expect("intervals serialize")
}

fn locator(p: &Prompt<'_>) -> String {
    let Some([ws, we]) = p.range() else {
        return "<think>No index range given.</think>\n<Plan>\n- call diff_zscore scope=global threshold=3.0\n</Plan>".into();
    };
    let feedback = intervals(&UNSUPPORTED, p.section("Reviewer feedback"));
    let mut lines = Vec::new();
    let think;
    if feedback.is_empty() {
        let candidates = p.candidates();
        think = format!(
            "{} candidate interval(s). Check jumps across the window, its global structure, and each candidate against its context.",
            candidates.len()
        );
        lines.push(format!("- call diff_zscore scope=global threshold={Z_THRESHOLD:.1}"));
        lines.push("- call global_structure".to_string());
        for [s, e] in candidates {
            lines.push(format!("- call stat_features start={s} end={e}"));
            if [s, e] != [ws, we] {
                lines.push(format!("- call local_structure start={s} end={e}"));
            }
        }
    } else {
        think = "The reviewer flagged verdicts without evidence. Re-examine them against their context.".to_string();
        for [s, e] in feedback.into_iter().take(MAX_RECHECKS) {
            let (s, e) = (s.max(ws), e.min(we));
            if s <= e && [s, e] != [ws, we] {
                lines.push(format!("- call local_structure start={s} end={e}"));
            }
        }
    }
    lines.push(format!(
        "- rule: flag a candidate when diff_zscore outliers fall inside it or context_deviation >= {CONTEXT_THRESHOLD:.1}"
    ));
    format!("<think>{think}</think>\n<Plan>\n{}\n</Plan>", lines.join("\n"))
}

fn actor(p: &Prompt<'_>) -> String {
    let plan = p.section("Plan");
    let mut calls: Vec<serde_json::Value> = CALL_LINE
        .captures_iter(plan)
        .map(|c| {
            let params: serde_json::Map<String, serde_json::Value> = c[2]
                .split_whitespace()
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.to_string(), param_value(v)))
                .collect();
            json!({"tool": &c[1], "params": params})
        })
        .collect();
    if calls.is_empty() {
        calls.push(json!({"tool": "diff_zscore", "params": {"scope": "global", "threshold": Z_THRESHOLD}}));
        calls.push(json!({"tool": "global_structure", "params": {}}));
        calls.push(json!({"tool": "stat_features", "params": {}}));
    }
    format!(
        "```json\n{}\n```",
        serde_json::Value::Array(calls)
    )
}

fn param_value(v: &str) -> serde_json::Value {
    if let Ok(i) = v.parse::<i64>() {
        json!(i)
    } else if let Some(x) = v.parse::<f64>().ok().filter(|x| x.is_finite()) {
        json!(x)
    } else {
        json!(v)
    }
}

/// Evidence parsed back out of tool summary lines.
#[derive(Default)]
struct Evidence {
    /// Outlier jump index to signed z (largest magnitude kept), one map per
    /// diff_zscore result.
    zscores: Vec<BTreeMap<usize, f64>>,
    /// Local span to (slope, context deviation).
    local: BTreeMap<[usize; 2], (f64, f64)>,
    periodic: bool,
    level_shift: Option<usize>,
}

impl Evidence {
    fn parse(text: &str) -> Self {
        let mut ev = Evidence::default();
        for c in ZSCORE_LINE.captures_iter(text) {
            let map = OUTLIER
                .captures_iter(&c[1])
                .filter_map(|o| Some((o[1].parse().ok()?, o[2].parse().ok()?)))
                .collect();
            ev.zscores.push(map);
        }
        for c in LOCAL_LINE.captures_iter(text) {
            let (Ok(s), Ok(e)) = (c[1].parse(), c[2].parse()) else {
                continue;
            };
            let slope = parse_num(&c[3]).unwrap_or(0.0);
            let dev = parse_num(&c[4]).unwrap_or(0.0);
            ev.local.insert([s, e], (slope, dev));
        }
        if let Some(c) = GLOBAL_LINE.captures(text) {
            ev.periodic = &c[1] != "none";
            ev.level_shift = c[2].parse().ok();
        }
        ev
    }

    /// Union of all outlier jumps touching a point of `[s, e]`.
    fn outliers_in(&self, [s, e]: [usize; 2]) -> BTreeMap<usize, f64> {
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        for map in &self.zscores {
            for (&i, &z) in map.range(s.saturating_sub(1)..=e) {
                let slot = out.entry(i).or_insert(z);
                if z.abs() > slot.abs() {
                    *slot = z;
                }
            }
        }
        out
    }

    fn supporting_zscore_results(&self, [s, e]: [usize; 2]) -> usize {
        self.zscores
            .iter()
            .filter(|m| m.range(s.saturating_sub(1)..=e).next().is_some())
            .count()
    }

    /// Point ranges the evidence flags, as in `ToolResult::evidence`.
    fn flagged(&self) -> Vec<[usize; 2]> {
        let mut out: Vec<[usize; 2]> = self
            .zscores
            .iter()
            .flat_map(|m| m.keys().map(|&i| [i, i + 1]))
            .collect();
        out.extend(self.level_shift.map(|i| [i, i]));
        out.extend(
            self.local
                .iter()
                .filter(|(_, (_, d))| *d >= CONTEXT_THRESHOLD)
                .map(|(span, _)| *span),
        );
        out
    }
}

fn parse_num(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

fn detector(p: &Prompt<'_>) -> String {
    let ev = Evidence::parse(p.section("Tool results"));
    let values = p.values();
    let median = {
        let mut v: Vec<f64> = values.values().copied().collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            0.0
        } else {
            quantile_sorted(&v, 0.5)
        }
    };
    let deviation = |i: usize| values.get(&i).map_or(0.0, |v| (v - median).abs());

    let mut verdicts: Vec<AnomalyVerdict> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    for cand in p.candidates() {
        let [s, e] = cand;
        let outs = ev.outliers_in(cand);
        let (slope, ctx) = ev.local.get(&cand).copied().unwrap_or((0.0, 0.0));
        let z_support = !outs.is_empty();
        let ctx_support = ctx >= CONTEXT_THRESHOLD;
        if !(z_support || ctx_support) {
            notes.push(format!("{} has no supporting evidence.", fmt_interval(cand)));
            continue;
        }
        let shift_support = ev.level_shift.is_some_and(|i| s <= i && i <= e);
        let support = ev.supporting_zscore_results(cand) + ctx_support as usize + shift_support as usize;
        let confidence = (1 + support).min(3) as u8;

        // A spike shows as two consecutive jumps of opposite sign.
        let spikes: Vec<usize> = outs
            .iter()
            .filter_map(|(&i, &z)| {
                let prev = *outs.get(&i.checked_sub(1)?)?;
                (prev.signum() != z.signum() && (s..=e).contains(&i)).then_some(i)
            })
            .collect();
        let max_z = outs.values().map(|z| z.abs()).fold(0.0, f64::max);
        let z_note = if z_support {
            let idx: Vec<String> = outs.keys().map(|i| i.to_string()).collect();
            format!("difference outliers at [{}] (max |z| = {max_z:.2})", idx.join(", "))
        } else {
            "no difference outliers".to_string()
        };
        let ctx_note = format!("context deviation {}", if ctx.is_infinite() { "inf".into() } else { format!("{ctx:.2}") });

        if !spikes.is_empty() {
            for i in spikes {
                verdicts.push(AnomalyVerdict {
                    interval: [i, i],
                    kind: "point_global".into(),
                    explanation: format!("Isolated spike at {i}: {z_note}; {ctx_note}."),
                    confidence,
                });
            }
            continue;
        }

        let interval = if z_support {
            let lo = *outs.keys().next().unwrap();
            let hi = *outs.keys().next_back().unwrap();
            if lo == hi {
                // A lone jump: pick the endpoint further from the bulk.
                let p = if deviation(lo) > deviation(lo + 1) { lo } else { lo + 1 };
                [p.clamp(s, e), p.clamp(s, e)]
            } else {
                let (a, b) = ((lo + 1).clamp(s, e), hi.clamp(s, e));
                [a.min(b), a.max(b)]
            }
        } else {
            cand
        };
        let kind = if interval[0] == interval[1] {
            "point_global"
        } else if ev.periodic {
            "pattern_seasonal"
        } else if slope.abs() * (interval[1] - interval[0]) as f64 >= TREND_RISE {
            "pattern_trend"
        } else {
            "pattern_contextual"
        };
        verdicts.push(AnomalyVerdict {
            interval,
            kind: kind.into(),
            explanation: format!("Candidate {}: {z_note}; {ctx_note}.", fmt_interval(cand)),
            confidence,
        });
    }

    let think = if verdicts.is_empty() && notes.is_empty() {
        "No candidate intervals to examine.".to_string()
    } else {
        format!("{} verdict(s). {}", verdicts.len(), notes.join(" "))
    };
    format!(
        "<think>{}</think>\n```json\n{}\n```",
        think.trim(),
        serde_json::to_string(&verdicts).expect("verdicts serialize")
    )
}

fn evaluator(p: &Prompt<'_>) -> String {
    let round: usize = ROUND
        .captures(p.section("Review round"))
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(1);
    let verdicts = parse_detector_verdicts(p.section("Detector result")).unwrap_or_default();
    let ev = Evidence::parse(p.section("Tool results"));
    let flagged = ev.flagged();
    let unsupported: BTreeSet<[usize; 2]> = verdicts
        .iter()
        .filter(|v| !flagged.iter().any(|f| v.overlaps(*f)))
        .map(|v| v.interval)
        .collect();
    let needs_refinement = round == 1 && !unsupported.is_empty();
    let issues: Vec<String> = unsupported
        .iter()
        .map(|i| format!("verdict {} lacks tool support", fmt_interval(*i)))
        .collect();
    let suggestions: Vec<String> = unsupported
        .iter()
        .map(|i| format!("re-examine {} against its context", fmt_interval(*i)))
        .collect();
    let tool_usage = if ev.zscores.is_empty() && ev.local.is_empty() {
        "acceptable"
    } else {
        "good"
    };
    let reasoning = if unsupported.is_empty() { "good" } else { "acceptable" };
    json!({
        "issues": issues,
        "suggestions": suggestions,
        "needs_refinement": needs_refinement,
        "quality_metrics": {"planning": "good", "tool_usage": tool_usage, "reasoning": reasoning},
    })
    .to_string()
}
