use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CandidateInterval;
use crate::baselines::{spectral_residual, MIN_SERIES_LEN};
use crate::numeric::{is_degenerate_spread, mean, std_pop};
use crate::protocol::{render_prompt, AgentRole, BackendError, ChatBackend, ChatTurn};
use crate::series::Window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeParams {
    pub max_candidates: usize,
    /// Saliency cut at `mean + sigma_k * std`.
    pub sigma_k: f64,
    /// Runs separated by fewer than this many points merge.
    pub gap: usize,
    /// Points added on both sides of each run.
    pub margin: usize,
    pub avg_window: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            max_candidates: 3,
            sigma_k: 2.0,
            gap: 5,
            margin: 3,
            avg_window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LocalizationSource {
    Proxy,
    Backend,
    /// The backend reply could not be parsed; the proxy answered instead.
    Fallback { reason: String },
}

/// One exchange with a perception backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerExchange {
    pub digest: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    /// Window-relative, end-exclusive, disjoint and sorted.
    pub candidates: Vec<CandidateInterval>,
    pub source: LocalizationSource,
    pub exchange: Option<LocalizerExchange>,
}

/// Coarse candidates from spectral residual saliency: threshold, merge
/// nearby runs, widen, and keep the most salient few.
pub fn proxy_candidates(values: &[f64], params: &LocalizeParams) -> Vec<CandidateInterval> {
    let n = values.len();
    if n < MIN_SERIES_LEN || params.max_candidates == 0 {
        return Vec::new();
    }
    let Ok(saliency) = spectral_residual(values, params.avg_window) else {
        return Vec::new();
    };
    let mu = mean(&saliency);
    let sd = std_pop(&saliency);
    let scale = saliency.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if is_degenerate_spread(sd, scale) {
        return Vec::new();
    }
    let cut = mu + params.sigma_k * sd;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in (0..n).filter(|&i| saliency[i] > cut) {
        match runs.last_mut() {
            Some((_, end)) if i - *end < params.gap => *end = i + 1,
            _ => runs.push((i, i + 1)),
        }
    }

    let mut widened: Vec<(usize, usize)> = Vec::new();
    for (s, e) in runs {
        let (s, e) = (s.saturating_sub(params.margin), (e + params.margin).min(n));
        match widened.last_mut() {
            Some((_, end)) if s < *end => *end = (*end).max(e),
            _ => widened.push((s, e)),
        }
    }

    let mut candidates: Vec<CandidateInterval> = widened
        .into_iter()
        .map(|(s, e)| CandidateInterval {
            start: s,
            end: e,
            saliency: saliency[s..e].iter().copied().fold(f64::MIN, f64::max),
        })
        .collect();
    candidates.sort_by(|a, b| b.saliency.total_cmp(&a.saliency).then(a.start.cmp(&b.start)));
    candidates.truncate(params.max_candidates);
    candidates.sort_by_key(|c| c.start);
    candidates
}

/// Reads `[[start, end], ...]` (absolute, inclusive) from a localizer reply,
/// clipped to the window and merged into sorted disjoint candidates.
pub fn parse_localizer_reply(reply: &str, window: &Window) -> Option<Vec<CandidateInterval>> {
    let text = crate::protocol::strip_think(reply);
    let pairs = text
        .char_indices()
        .filter(|&(_, c)| c == '[')
        .find_map(|(i, _)| {
            let v: Value = serde_json::Deserializer::from_str(&text[i..])
                .into_iter::<Value>()
                .next()?
                .ok()?;
            let items = v.as_array()?;
            items
                .iter()
                .map(|p| {
                    let p = p.as_array().filter(|p| p.len() == 2)?;
                    Some((p[0].as_u64()? as usize, p[1].as_u64()? as usize))
                })
                .collect::<Option<Vec<_>>>()
        })?;

    let mut spans: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(s, e)| s <= e && e >= window.start && s < window.end)
        .map(|(s, e)| (s.max(window.start) - window.start, e.min(window.last()) + 1 - window.start))
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some((_, end)) if s < *end => *end = (*end).max(e),
            _ => merged.push((s, e)),
        }
    }
    Some(
        merged
            .into_iter()
            .map(|(start, end)| CandidateInterval {
                start,
                end,
                saliency: 1.0,
            })
            .collect(),
    )
}

/// Series fragment shared by every prompt: one `index,value` line per point.
pub fn render_values(window: &Window) -> String {
    window
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{},{v:.4}", window.start + i))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_range(window: &Window) -> String {
    format!("[{}, {}]", window.start, window.last())
}

/// Candidate intervals, using the proxy unless a perception backend is given.
/// Transport errors propagate; an unusable reply falls back to the proxy.
pub fn localize_candidates(
    window: &Window,
    backend: Option<&dyn ChatBackend>,
    params: &LocalizeParams,
) -> Result<Localization, BackendError> {
    let Some(backend) = backend else {
        return Ok(Localization {
            candidates: proxy_candidates(&window.values, params),
            source: LocalizationSource::Proxy,
            exchange: None,
        });
    };
    let context = BTreeMap::from([
        ("Time Series Values".to_string(), render_values(window)),
        ("range".to_string(), render_range(window)),
    ]);
    let prompt = render_prompt(AgentRole::Localizer, &context).expect("localizer context is complete");
    let messages = [ChatTurn::user(prompt)];
    let digest = backend.digest(&messages);
    let reply = backend.complete(&messages)?;
    let exchange = Some(LocalizerExchange {
        digest,
        reply: reply.clone(),
    });
    Ok(match parse_localizer_reply(&reply, window) {
        Some(mut candidates) => {
            candidates.truncate(params.max_candidates);
            Localization {
                candidates,
                source: LocalizationSource::Backend,
                exchange,
            }
        }
        None => Localization {
            candidates: proxy_candidates(&window.values, params),
            source: LocalizationSource::Fallback {
                reason: "reply holds no interval list".into(),
            },
            exchange,
        },
    })
}
