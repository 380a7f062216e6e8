use std::sync::Arc;

use super::*;
use crate::protocol::{AgentRole, AnomalyVerdict, ReplayBackend, ReplayEntry};
use crate::series::{generate_synthetic, AnomalyKind, Base, InjectedAnomaly, SynthSpec};
use crate::series::{prepare_window, Window};

fn spike_window(seed: u64) -> Window {
    let spec = SynthSpec {
        name: "s".into(),
        length: 100,
        base: Base::Sinusoid {
            period: 25.0,
            amplitude: 1.0,
            offset: 0.0,
        },
        noise_sigma: 0.05,
        anomalies: vec![InjectedAnomaly {
            kind: AnomalyKind::PointGlobal,
            position: 60,
            span: 1,
            magnitude: 40.0,
        }],
        seed,
    };
    let ts = generate_synthetic(&spec).unwrap();
    prepare_window(&Window::new("s", 0, ts.values), true)
}

fn heuristic() -> Workflow {
    Workflow::new(WorkflowConfig::default()).unwrap()
}

const GOOD_PLAN: &str = "<think>look</think><Plan>- call diff_zscore scope=global threshold=3.0</Plan>";
const GOOD_CALLS: &str = "```json\n[{\"tool\": \"diff_zscore\", \"params\": {\"scope\": \"global\"}}]\n```";
const GOOD_VERDICTS: &str = "[{\"interval\": [60, 60], \"type\": \"point_global\", \"explanation\": \"jump\", \"confidence\": 3}]";
const ACCEPT: &str = "{\"issues\": [], \"suggestions\": [], \"needs_refinement\": false, \"quality_metrics\": {\"planning\": \"good\", \"tool_usage\": \"good\", \"reasoning\": \"good\"}}";
const REFINE: &str = "{\"issues\": [\"x\"], \"suggestions\": [\"y\"], \"needs_refinement\": true, \"quality_metrics\": {\"planning\": \"poor\", \"tool_usage\": \"poor\", \"reasoning\": \"poor\"}}";

fn scripted(entries: Vec<(AgentRole, &str)>) -> Workflow {
    let entries = entries.into_iter().map(|(r, s)| ReplayEntry::for_role(r, s)).collect();
    let backend = Arc::new(ReplayBackend::new("scripted", 0.0, entries));
    Workflow::with_backend(WorkflowConfig::default(), backend).unwrap()
}

#[test]
fn heuristic_episode_finds_spike() {
    let run = heuristic().run_episode(&spike_window(1)).unwrap();
    assert!(run.verdicts.iter().any(|v| v.start() <= 60 && 60 <= v.end()), "{:?}", run.verdicts);
    assert_eq!(run.trace.outcome, EpisodeOutcome::Completed);
    assert!(run.trace.tool_call_count() > 0);
    assert!(run.trace.iterations >= 1);
}

#[test]
fn flat_window_short_circuits() {
    let w = Window::new("flat", 0, vec![0.0; 100]);
    let run = heuristic().run_episode(&w).unwrap();
    assert!(run.verdicts.is_empty());
    assert_eq!(run.trace.outcome, EpisodeOutcome::ShortCircuited);
    assert_eq!(run.trace.completion_count(), 0);
}

#[test]
fn trace_round_trips_and_replays() {
    let run = heuristic().run_episode(&spike_window(2)).unwrap();
    let text = run.trace.to_jsonl();
    let back = EpisodeTrace::from_jsonl(&text).unwrap();
    assert_eq!(back, run.trace);
    assert_eq!(verify_replay(&back).unwrap(), run.verdicts);
}

#[test]
fn tampered_reply_is_detected() {
    let run = heuristic().run_episode(&spike_window(3)).unwrap();
    let mut t = run.trace.clone();
    let idx = t
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Complete { role: AgentRole::Locator, .. }))
        .unwrap();
    if let EventKind::Complete { reply, .. } = &mut t.events[idx].kind {
        *reply = Some("<Plan>- call global_structure</Plan>".into());
    }
    assert!(matches!(replay_episode(&t), Err(WorkflowError::TraceCorrupt(_))));

    let mut t = run.trace.clone();
    t.events.truncate(t.events.len() / 2);
    assert!(matches!(replay_episode(&t), Err(WorkflowError::TraceCorrupt(_))));

    let mut t = run.trace;
    t.final_verdicts.push(AnomalyVerdict {
        interval: [1, 2],
        kind: "x".into(),
        explanation: String::new(),
        confidence: 1,
    });
    assert!(matches!(verify_replay(&t), Err(WorkflowError::ReplayDiverged)));
}

#[test]
fn one_retry_then_success() {
    let wf = scripted(vec![
        (AgentRole::Locator, "no plan here"),
        (AgentRole::Locator, GOOD_PLAN),
        (AgentRole::Actor, GOOD_CALLS),
        (AgentRole::Detector, GOOD_VERDICTS),
        (AgentRole::Evaluator, ACCEPT),
    ]);
    let run = wf.run_episode(&spike_window(4)).unwrap();
    assert_eq!(run.verdicts.len(), 1);
    let locator_attempts: Vec<u8> = run
        .trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Complete { role: AgentRole::Locator, attempt, .. } => Some(*attempt),
            _ => None,
        })
        .collect();
    assert_eq!(locator_attempts, vec![1, 2]);
}

#[test]
fn second_parse_failure_is_role_failure() {
    let wf = scripted(vec![(AgentRole::Locator, "nothing")]);
    let f = wf.run_episode(&spike_window(5)).unwrap_err();
    assert!(matches!(f.error, WorkflowError::RoleFailure { role: AgentRole::Locator, .. }));
    assert!(matches!(f.trace.outcome, EpisodeOutcome::Failed { .. }));
    assert_eq!(f.trace.completion_count(), 2);
}

#[test]
fn refinement_is_bounded() {
    let wf = scripted(vec![
        (AgentRole::Locator, GOOD_PLAN),
        (AgentRole::Actor, GOOD_CALLS),
        (AgentRole::Detector, GOOD_VERDICTS),
        (AgentRole::Evaluator, REFINE),
    ]);
    let run = wf.run_episode(&spike_window(6)).unwrap();
    assert_eq!(run.trace.iterations, 3);
    assert!(run.trace.refinement_exhausted);
}

#[test]
fn tool_budget_is_enforced() {
    let calls = format!(
        "[{}]",
        vec!["{\"tool\": \"global_structure\", \"params\": {}}"; 13].join(", ")
    );
    let wf = scripted(vec![(AgentRole::Locator, GOOD_PLAN), (AgentRole::Actor, &calls)]);
    let f = wf.run_episode(&spike_window(7)).unwrap_err();
    assert!(matches!(
        f.error,
        WorkflowError::ToolBudgetExceeded { requested: 13, used: 0, budget: 12 }
    ));
    assert_eq!(f.trace.tool_call_count(), 0);
}

#[test]
fn out_of_window_verdicts_are_clipped() {
    let far = "[{\"interval\": [90, 150], \"type\": \"pattern_trend\", \"explanation\": \"ramp\", \"confidence\": 2}, {\"interval\": [200, 210], \"type\": \"x\", \"explanation\": \"\", \"confidence\": 1}]";
    let wf = scripted(vec![
        (AgentRole::Locator, GOOD_PLAN),
        (AgentRole::Actor, GOOD_CALLS),
        (AgentRole::Detector, far),
        (AgentRole::Evaluator, ACCEPT),
    ]);
    let run = wf.run_episode(&spike_window(8)).unwrap();
    assert_eq!(run.verdicts.len(), 1);
    assert_eq!(run.verdicts[0].interval, [90, 99]);
}

#[test]
fn dataset_run_covers_windows_in_order() {
    let spec = SynthSpec {
        name: "d".into(),
        length: 250,
        base: Base::Sinusoid { period: 25.0, amplitude: 1.0, offset: 0.0 },
        noise_sigma: 0.05,
        anomalies: vec![InjectedAnomaly {
            kind: AnomalyKind::PointGlobal,
            position: 160,
            span: 1,
            magnitude: 40.0,
        }],
        seed: 9,
    };
    let ts = generate_synthetic(&spec).unwrap();
    let seq = Workflow::new(WorkflowConfig {
        execution: crate::exec::Execution::Sequential,
        ..WorkflowConfig::default()
    })
    .unwrap()
    .run_dataset(&ts)
    .unwrap();
    let par = heuristic().run_dataset(&ts).unwrap();
    assert_eq!(seq.labels, par.labels);
    assert_eq!(seq.verdicts, par.verdicts);
    assert_eq!(seq.traces.len(), 3);
    assert_eq!(seq.traces.iter().map(|t| t.window.start).collect::<Vec<_>>(), vec![0, 100, 200]);
    assert_eq!(seq.labels[160], 1);
}

#[test]
fn config_validation() {
    assert!(Workflow::new(WorkflowConfig { tool_budget: 0, ..Default::default() }).is_err());
    assert!(Workflow::new(WorkflowConfig { max_refinements: 17, ..Default::default() }).is_err());
}
