use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;
use tsagent_core::protocol::{remote_request_count, AgentRole, ReplayEntry};
use tsagent_core::series::{generate_synthetic, write_series, AnomalyKind, Base, InjectedAnomaly, SynthSpec};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["tsagent"];
    full.extend_from_slice(args);
    tsagent_cli::run(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn spike_spec(name: &str, length: usize, at: usize) -> SynthSpec {
    SynthSpec {
        name: name.into(),
        length,
        base: Base::Sinusoid {
            period: 25.0,
            amplitude: 1.0,
            offset: 0.0,
        },
        noise_sigma: 0.1,
        anomalies: vec![InjectedAnomaly {
            kind: AnomalyKind::PointGlobal,
            position: at,
            span: 1,
            magnitude: 10.0,
        }],
        seed: 11,
    }
}

fn write_csv(dir: &Path, name: &str, spec: &SynthSpec, labeled: bool) -> PathBuf {
    let mut ts = generate_synthetic(spec).unwrap();
    if !labeled {
        ts.labels = None;
    }
    let path = dir.join(format!("{name}.csv"));
    let mut buf = Vec::new();
    write_series(&ts, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn scripted_fixture(dir: &Path, detector_reply: &str) -> PathBuf {
    let entries = [
        ReplayEntry::for_role(AgentRole::Locator, "<think>check</think><Plan>- call diff_zscore scope=global threshold=3.0</Plan>"),
        ReplayEntry::for_role(AgentRole::Actor, r#"[{"tool": "diff_zscore", "params": {"scope": "global"}}]"#),
        ReplayEntry::for_role(AgentRole::Detector, detector_reply),
        ReplayEntry::for_role(
            AgentRole::Evaluator,
            r#"{"issues": [], "suggestions": [], "needs_refinement": false, "quality_metrics": {"planning": "good", "tool_usage": "good", "reasoning": "good"}}"#,
        ),
    ];
    let path = dir.join("fixture.jsonl");
    let text: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn detect_heuristic_writes_results_without_network() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "spike", &spike_spec("spike", 100, 40), true);
    let out = dir.path().join("out");
    let before = remote_request_count();
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&out), "--backend", "heuristic"]), 0);
    assert_eq!(remote_request_count(), before);

    let metrics = json(&out.join("spike/metrics.json"));
    assert!(metrics["f1"].as_f64().unwrap() > 0.0);
    assert!(out.join("spike/traces/spike_0.trace.jsonl").exists());
    assert!(out.join("spike/labels.csv").exists());
    assert!(out.join("metrics.csv").exists());
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("Precision,Recall,F1,Best-F1,Average"));
}

#[test]
fn remote_without_key_fails_before_any_work() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "spike", &spike_spec("spike", 100, 40), true);
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_tsagent"))
        .args(["detect", "--input", p(&input), "--out", p(&out), "--backend", "remote"])
        .env_remove("TSAGENT_API_KEY")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn unlabeled_input_has_no_metrics() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "raw", &spike_spec("raw", 100, 40), false);
    let out = dir.path().join("out");
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&out)]), 0);
    assert!(out.join("raw/verdicts.json").exists());
    assert!(!out.join("raw/metrics.json").exists());
    assert!(!out.join("metrics.csv").exists());
    assert!(json(&out.join("summary.json"))["series"][0].get("metrics").is_none());
}

#[test]
fn detect_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "rep", &spike_spec("rep", 250, 130), true);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&a), "--plot"]), 0);
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&b), "--plot", "--sequential"]), 0);
    for f in ["rep/labels.csv", "rep/verdicts.json", "rep/metrics.json", "rep/plot.svg", "metrics.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "cfg", &spike_spec("cfg", 200, 40), true);
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, format!("input = {}\nout = {}\nwindow_length = 50\nwindow_step = 50\n", p(&input), p(&out))).unwrap();
    assert_eq!(run(&["detect", "--config", p(&cfg), "--window-length", "100", "--window-step", "100"]), 0);
    assert_eq!(json(&out.join("summary.json"))["series"][0]["windows"], 2);

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(run(&["detect", "--config", p(&cfg), "--input", p(&input), "--out", p(&out)]), 1);
}

#[test]
fn failing_episodes_give_partial_exit() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "bad", &spike_spec("bad", 100, 40), true);
    let fixture = dir.path().join("garbage.jsonl");
    let e = ReplayEntry::for_role(AgentRole::Locator, "I will not plan.");
    fs::write(&fixture, serde_json::to_string(&e).unwrap() + "\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&out), "--backend", "replay", "--replay", p(&fixture)]), 2);
    assert!(out.join("bad/failures.json").exists());
    assert!(out.join("bad/traces/bad_0.trace.jsonl").exists());
}

#[test]
fn baseline_command() {
    let dir = TempDir::new().unwrap();
    let flat = SynthSpec {
        name: "flat".into(),
        length: 64,
        base: Base::Constant { level: 2.0 },
        noise_sigma: 0.0,
        anomalies: vec![],
        seed: 0,
    };
    let flat_csv = write_csv(dir.path(), "flat", &flat, true);
    let spike_csv = write_csv(dir.path(), "spike", &spike_spec("spike", 100, 40), true);
    let out = dir.path().join("base");
    for method in ["fft", "sr"] {
        assert_eq!(run(&["baseline", "--method", method, "--input", p(&flat_csv), "--input", p(&spike_csv), "--out", p(&out)]), 0);
        let flat_scores = fs::read_to_string(out.join(format!("flat.{method}.scores.csv"))).unwrap();
        assert!(flat_scores.lines().skip(1).all(|l| l.ends_with(",0")));
        let spike_scores = fs::read_to_string(out.join(format!("spike.{method}.scores.csv"))).unwrap();
        assert!(spike_scores.lines().any(|l| l.starts_with("40,") && l.ends_with(",1")), "{method}");
    }
    assert_eq!(run(&["baseline", "--method", "wavelet", "--input", p(&spike_csv), "--out", p(&out)]), 1);
}

#[test]
fn synth_command() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, serde_json::to_string(&spike_spec("x", 80, 10)).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(run(&["synth", "--spec", p(&spec), "--out", p(&a)]), 0);
    assert_eq!(run(&["synth", "--spec", p(&spec), "--out", p(&b)]), 0);
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("index,value,label\n"));
    assert_eq!(text.lines().count(), 81);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    fs::write(&spec, serde_json::to_string(&spike_spec("x", 80, 80)).unwrap()).unwrap();
    assert_eq!(run(&["synth", "--spec", p(&spec), "--out", p(&a)]), 1);
}

#[test]
fn replay_command() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "rp", &spike_spec("rp", 100, 40), true);
    let out = dir.path().join("out");
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&out)]), 0);
    let trace = out.join("rp/traces/rp_0.trace.jsonl");
    let verdicts = dir.path().join("v.json");
    assert_eq!(run(&["replay", "--trace", p(&trace), "--out", p(&verdicts)]), 0);
    assert_eq!(json(&verdicts), json(&out.join("rp/verdicts.json")));

    let text = fs::read_to_string(&trace).unwrap().replacen("<Plan>", "<Plan>- call stat_features\n", 1);
    let tampered = dir.path().join("t.trace.jsonl");
    fs::write(&tampered, text).unwrap();
    assert_ne!(run(&["replay", "--trace", p(&tampered)]), 0);
    assert_eq!(run(&["replay", "--trace", p(&dir.path().join("missing.jsonl"))]), 1);
}

#[test]
fn score_reward_command() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "rw", &spike_spec("rw", 100, 40), true);

    let good = dir.path().join("good");
    let exact = scripted_fixture(dir.path(), r#"[{"interval": [40, 40], "type": "point_global", "explanation": "jump", "confidence": 3}]"#);
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&good), "--backend", "replay", "--replay", p(&exact)]), 0);
    let trace = good.join("rw/traces/rw_0.trace.jsonl");
    assert_eq!(run(&["score-reward", "--trace", p(&trace), "--truth", p(&input)]), 0);
    let report = json(&good.join("rw/traces/rw_0.reward.json"));
    assert_eq!(report["total"].as_f64().unwrap(), 1.0 + 0.5);

    let heavy = dir.path().join("heavy");
    let wide = scripted_fixture(dir.path(), r#"[{"interval": [10, 70], "type": "point_global", "explanation": "broad", "confidence": 2}]"#);
    assert_eq!(run(&["detect", "--input", p(&input), "--out", p(&heavy), "--backend", "replay", "--replay", p(&wide)]), 0);
    let trace = heavy.join("rw/traces/rw_0.trace.jsonl");
    let reward = heavy.join("rw/traces/rw_0.reward.json");
    assert_eq!(run(&["score-reward", "--trace", p(&trace), "--truth", p(&input)]), 0);
    let with_fp = json(&reward)["total"].as_f64().unwrap();
    assert_eq!(run(&["score-reward", "--trace", p(&trace), "--truth", p(&input), "--no-fp"]), 0);
    let without_fp = json(&reward)["total"].as_f64().unwrap();
    assert!(without_fp > with_fp);

    let short = write_csv(dir.path(), "short", &spike_spec("short", 50, 10), true);
    assert_eq!(run(&["score-reward", "--trace", p(&trace), "--truth", p(&short)]), 1);
}

#[test]
fn plot_command() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(dir.path(), "pl", &spike_spec("pl", 100, 40), true);
    let verdicts = dir.path().join("v.json");
    fs::write(&verdicts, r#"[{"interval": [39, 41], "type": "point_global", "explanation": "x", "confidence": 2}]"#).unwrap();
    let svg = dir.path().join("p.svg");
    assert_eq!(run(&["plot", "--input", p(&input), "--verdicts", p(&verdicts), "--out", p(&svg), "--width", "500", "--height", "120"]), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains(r#"width="500" height="120""#));
    assert!(text.contains("<polyline"));
    assert_eq!(text.matches(r#"class="truth""#).count(), 1);
    assert_eq!(text.matches(r#"class="verdict""#).count(), 1);

    let raw = dir.path().join("raw.csv");
    fs::write(&raw, "index,value\n0,1\n1,2\n2,1.5\n").unwrap();
    assert_eq!(run(&["plot", "--input", p(&raw), "--out", p(&svg)]), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(!text.contains("class=\"verdict\"") && !text.contains("class=\"truth\""));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["detect", "--tool-budget", "many"]), 1);
    assert_eq!(run(&["--help"]), 0);
}
