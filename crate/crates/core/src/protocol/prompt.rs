use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::{Captures, Regex};

use super::{AgentRole, ProtocolError};

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([A-Za-z][A-Za-z_ ]*)\}").unwrap());

pub fn template(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Localizer => include_str!("../../prompts/localizer.txt"),
        AgentRole::Locator => include_str!("../../prompts/locator.txt"),
        AgentRole::Actor => include_str!("../../prompts/actor.txt"),
        AgentRole::Detector => include_str!("../../prompts/detector.txt"),
        AgentRole::Evaluator => include_str!("../../prompts/evaluator.txt"),
    }
}

/// Placeholder names a role's template expects, in order of first use.
pub fn placeholders(role: AgentRole) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for c in PLACEHOLDER.captures_iter(template(role)) {
        let name = c.get(1).unwrap().as_str();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Fills every `{name}` in the role's template from `context` in a single
/// pass. Substituted text is never rescanned.
pub fn render_prompt(
    role: AgentRole,
    context: &BTreeMap<String, String>,
) -> Result<String, ProtocolError> {
    if let Some(missing) = placeholders(role)
        .into_iter()
        .find(|p| !context.contains_key(*p))
    {
        return Err(ProtocolError::MissingPlaceholder(missing.to_string()));
    }
    Ok(PLACEHOLDER
        .replace_all(template(role), |c: &Captures<'_>| context[&c[1]].clone())
        .into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_context(role: AgentRole) -> BTreeMap<String, String> {
        placeholders(role)
            .into_iter()
            .map(|p| (p.to_string(), format!("<{p} value>")))
            .collect()
    }

    #[test]
    fn locator_placeholders() {
        let p = placeholders(AgentRole::Locator);
        for name in [
            "Vision anomaly intervals",
            "Available Tools",
            "Domain Knowledge",
            "Time Series Values",
            "range",
            "Evaluator Feedback",
        ] {
            assert!(p.contains(&name), "{name}");
        }
    }

    #[test]
    fn renders_candidates_verbatim() {
        let mut ctx = full_context(AgentRole::Locator);
        ctx.insert(
            "Vision anomaly intervals".into(),
            "- [120, 135] (saliency 4.2000)".into(),
        );
        let text = render_prompt(AgentRole::Locator, &ctx).unwrap();
        assert!(text.contains("- [120, 135] (saliency 4.2000)"));
        assert!(!PLACEHOLDER.is_match(&text));
        assert_eq!(text, render_prompt(AgentRole::Locator, &ctx).unwrap());
    }

    #[test]
    fn missing_fragment_is_an_error() {
        let mut ctx = full_context(AgentRole::Locator);
        ctx.remove("Domain Knowledge");
        assert_eq!(
            render_prompt(AgentRole::Locator, &ctx),
            Err(ProtocolError::MissingPlaceholder("Domain Knowledge".into()))
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let mut ctx = full_context(AgentRole::Actor);
        ctx.insert("Plan".into(), "{range}".into());
        ctx.insert("range".into(), "[0, 9]".into());
        let text = render_prompt(AgentRole::Actor, &ctx).unwrap();
        assert!(text.contains("### Plan\n{range}\n"));
    }

    #[test]
    fn every_template_renders() {
        for role in AgentRole::ALL {
            assert!(!placeholders(role).is_empty());
            render_prompt(role, &full_context(role)).unwrap();
        }
    }
}
