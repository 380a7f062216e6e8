use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use tsagent_core::baselines::{fft_ad_score, spectral_residual_score, threshold_values};
use tsagent_core::eval::{
    best_f1, dataset_report, point_metrics, verdicts_to_labels, write_report_csv, DatasetReport,
    MetricsReport, SweepInput,
};
use tsagent_core::protocol::{
    build_backend, AgentRole, AnomalyVerdict, BackendError, BackendKind, RecordingBackend,
    API_KEY_ENV,
};
use tsagent_core::reward::{score_episode, write_reward_report, RewardBreakdown, RewardConfig};
use tsagent_core::series::{generate_synthetic, load_series, write_series, SynthSpec};
use tsagent_core::tools::KnowledgeStore;
use tsagent_core::workflow::{verify_replay, EpisodeTrace, Workflow, WorkflowError, WindowFailure};
use tsagent_core::TimeSeries;

use crate::plot::{render_svg, PlotSize};
use crate::{BaselineArgs, CliError, Method, PlotArgs, ReplayArgs, RunConfig, ScoreRewardArgs, SynthArgs};

/// Prints a line, ignoring a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output types serialize");
    write_file(path, text + "\n")
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Loads a series CSV, keeping labels when the header has a label column.
pub(crate) fn load_input(path: &Path) -> Result<TimeSeries, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header).map_err(io_err(path))?;
    let labeled = header.split(',').nth(2).is_some_and(|c| c.trim() == "label");
    load_series(path, labeled).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn workflow_error(e: WorkflowError) -> CliError {
    match e {
        WorkflowError::Backend {
            source: BackendError::InvalidConfig(m),
            ..
        } => CliError::Config(m),
        WorkflowError::Backend {
            source: BackendError::Unavailable(m),
            ..
        } => CliError::BackendUnavailable(m),
        WorkflowError::Backend { role, source } => CliError::Backend(format!("{role}: {source}")),
        WorkflowError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Input(other.to_string()),
    }
}

fn build_workflow(run: &RunConfig) -> Result<Workflow, CliError> {
    let wc = run.workflow_config()?;
    let key_missing = std::env::var(API_KEY_ENV).map_or(true, |k| k.trim().is_empty());
    let remote_role = run
        .kinds()
        .into_iter()
        .filter(|(r, _)| *r != AgentRole::Localizer || wc.localization == tsagent_core::workflow::LocalizationMode::Backend)
        .any(|(_, k)| k == BackendKind::Remote);
    if remote_role && key_missing {
        return Err(CliError::BackendUnavailable(format!("{API_KEY_ENV} is not set")));
    }
    match &run.record {
        None => Workflow::new(wc).map_err(workflow_error),
        Some(path) => {
            let kinds = run.kinds();
            if kinds.values().any(|k| *k != kinds[&AgentRole::Locator]) {
                return Err(CliError::Config("recording needs one backend for every role".into()));
            }
            wc.validate().map_err(workflow_error)?;
            let inner = build_backend(&wc.backend_for(AgentRole::Locator)).map_err(|source| {
                workflow_error(WorkflowError::Backend {
                    role: AgentRole::Locator,
                    source,
                })
            })?;
            let rec = RecordingBackend::create(inner, path).map_err(io_err(path))?;
            Workflow::with_backend(wc, Arc::new(rec)).map_err(workflow_error)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesSummary {
    pub series: String,
    pub points: usize,
    pub windows: usize,
    pub verdicts: usize,
    pub failures: Vec<WindowFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectSummary {
    pub series: Vec<SeriesSummary>,
    /// Pooled over the labeled inputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetReport>,
}

/// Runs the workflow over every input and writes, under `<out>/<series>/`:
/// `labels.csv`, `verdicts.json`, `traces/<series>_<start>.trace.jsonl`,
/// `metrics.json` (labeled input), `failures.json` (failed windows) and
/// `plot.svg` (when asked). `<out>/summary.json` and, for labeled inputs,
/// `<out>/metrics.csv` cover the whole run.
pub fn detect(run: &RunConfig) -> Result<DetectSummary, CliError> {
    if run.inputs.is_empty() {
        return Err(CliError::Config("no input series given".into()));
    }
    let out = run
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory given".into()))?;
    let wf = build_workflow(run)?;
    let min_conf = run.min_confidence.unwrap_or(1);

    let series: Vec<TimeSeries> = run.inputs.iter().map(|p| load_input(p)).collect::<Result<_, _>>()?;
    let mut names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Config(format!("two inputs share the name `{}`", w[0])));
    }
    create_dir(&out)?;

    let mut summaries = Vec::new();
    let mut reports = Vec::new();
    let (mut failed, mut total, mut backend_failed) = (0, 0, 0);
    for ts in &series {
        let result = wf.run_dataset(ts).map_err(workflow_error)?;
        let dir = out.join(&ts.name);
        let traces = dir.join("traces");
        create_dir(&traces)?;
        for t in &result.traces {
            let path = traces.join(t.file_name());
            t.write_jsonl(&path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        }
        let labels = verdicts_to_labels(&result.verdicts, ts.len(), min_conf)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let mut csv = String::from("index,label\n");
        for (i, l) in labels.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        write_file(&dir.join("labels.csv"), csv)?;
        write_json(&dir.join("verdicts.json"), &result.verdicts)?;
        if !result.failures.is_empty() {
            write_json(&dir.join("failures.json"), &result.failures)?;
        }
        let metrics = match &ts.labels {
            Some(truth) => {
                let sweep = best_f1(SweepInput::Confidence {
                    verdicts: &result.verdicts,
                    truth,
                })
                .map_err(|e| CliError::Input(e.to_string()))?;
                let m = point_metrics(&labels, truth)
                    .map_err(|e| CliError::Input(e.to_string()))?
                    .with_sweep(&sweep);
                write_json(&dir.join("metrics.json"), &m)?;
                reports.push(m.clone());
                Some(m)
            }
            None => None,
        };
        if run.plot == Some(true) {
            let svg = render_svg(&ts.values, ts.labels.as_deref(), &result.verdicts, PlotSize::default());
            write_file(&dir.join("plot.svg"), svg)?;
        }
        failed += result.failures.len();
        backend_failed += result.failures.iter().filter(|f| f.backend).count();
        total += result.traces.len();
        summaries.push(SeriesSummary {
            series: ts.name.clone(),
            points: ts.len(),
            windows: result.traces.len(),
            verdicts: result.verdicts.len(),
            failures: result.failures,
            metrics,
        });
    }

    let dataset = if reports.is_empty() {
        None
    } else {
        let d = dataset_report(&reports).map_err(|e| CliError::Input(e.to_string()))?;
        let path = out.join("metrics.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_report_csv(file, &d).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Some(d)
    };
    let summary = DetectSummary {
        series: summaries,
        dataset,
    };
    write_json(&out.join("summary.json"), &summary)?;

    for s in &summary.series {
        let m = s
            .metrics
            .as_ref()
            .map(|m| format!(" precision={:.4} recall={:.4} f1={:.4}", m.precision, m.recall, m.f1))
            .unwrap_or_default();
        say!(
            "{}: {} window(s), {} verdict(s), {} failure(s){m}",
            s.series,
            s.windows,
            s.verdicts,
            s.failures.len()
        );
    }
    if let Some(d) = &summary.dataset {
        say!("dataset: precision={:.4} recall={:.4} f1={:.4}", d.metrics.precision, d.metrics.recall, d.metrics.f1);
    }

    if failed > 0 && backend_failed == total {
        return Err(CliError::Backend(format!("all {total} episode(s) failed on backend errors")));
    }
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }
    Ok(summary)
}

#[derive(Serialize)]
struct BaselineSummary<'a> {
    series: &'a str,
    method: &'a str,
    flagged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

/// Writes `<out>/<series>.<method>.scores.csv` (`index,score,label`) and,
/// for labeled input, `<out>/<series>.<method>.metrics.json`.
pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    if !(args.keep_fraction > 0.0 && args.keep_fraction <= 1.0) {
        return Err(CliError::Config("keep fraction must be in (0, 1]".into()));
    }
    let series: Vec<TimeSeries> = args.inputs.iter().map(|p| load_input(p)).collect::<Result<_, _>>()?;
    create_dir(&args.out)?;
    let method = match args.method {
        Method::Fft => "fft",
        Method::Sr => "sr",
    };
    for ts in &series {
        let scores = match args.method {
            Method::Fft => fft_ad_score(ts, args.keep_fraction),
            Method::Sr => spectral_residual_score(ts, args.avg_window),
        }
        .map_err(|e| CliError::Input(format!("{}: {e}", ts.name)))?
        .scores;
        let pred = threshold_values(&scores, args.k);
        let mut csv = String::from("index,score,label\n");
        for (i, (s, l)) in scores.iter().zip(&pred).enumerate() {
            csv.push_str(&format!("{i},{s},{l}\n"));
        }
        write_file(&args.out.join(format!("{}.{method}.scores.csv", ts.name)), csv)?;
        let metrics = match &ts.labels {
            Some(truth) => {
                let sweep = best_f1(SweepInput::Score { scores: &scores, truth })
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let m = point_metrics(&pred, truth)
                    .map_err(|e| CliError::Input(e.to_string()))?
                    .with_sweep(&sweep);
                write_json(&args.out.join(format!("{}.{method}.metrics.json", ts.name)), &m)?;
                Some(m)
            }
            None => None,
        };
        let summary = BaselineSummary {
            series: &ts.name,
            method,
            flagged: pred.iter().filter(|&&l| l == 1).count(),
            metrics,
        };
        say!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.spec).map_err(io_err(&args.spec))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.spec.display())))?;
    let ts = generate_synthetic(&spec).map_err(|e| CliError::Input(e.to_string()))?;
    let mut buf = Vec::new();
    write_series(&ts, &mut buf).map_err(io_err(&args.out))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, buf)?;
    say!("wrote {} point(s) to {}", ts.len(), args.out.display());
    Ok(())
}

fn read_trace(path: &Path) -> Result<EpisodeTrace, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("{}: no such trace file", path.display())));
    }
    EpisodeTrace::read_jsonl(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let trace = read_trace(&args.trace)?;
    let verdicts = verify_replay(&trace)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.trace.display())))?;
    let text = serde_json::to_string_pretty(&verdicts).expect("verdicts serialize");
    if let Some(out) = &args.out {
        write_file(out, format!("{text}\n"))?;
    }
    say!("{text}");
    Ok(())
}

pub fn score_reward(args: &ScoreRewardArgs) -> Result<RewardBreakdown, CliError> {
    let trace = read_trace(&args.trace)?;
    let series = load_input(&args.truth)?;
    let labels = series
        .labels
        .ok_or_else(|| CliError::Input(format!("{}: truth file has no label column", args.truth.display())))?;
    let w = &trace.window;
    let truth: &[u8] = if labels.len() == w.len() {
        &labels
    } else if labels.len() >= w.end {
        &labels[w.start..w.end]
    } else {
        return Err(CliError::Input(format!(
            "truth has {} point(s) but the trace window is [{}, {})",
            labels.len(),
            w.start,
            w.end
        )));
    };
    let store = match &args.knowledge {
        Some(p) => KnowledgeStore::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        None => KnowledgeStore::seeded(),
    };
    let config = RewardConfig {
        w_ts: args.w_ts,
        w_rm: args.w_rm,
        w_fp: args.w_fp,
        two_sided: !args.no_two_sided,
        fp_penalty: !args.no_fp,
        rule_matching: !args.no_rule_matching,
    };
    let breakdown = score_episode(&trace, truth, &config, &store).map_err(|e| CliError::Input(e.to_string()))?;
    write_reward_report(&args.trace, &trace, &config, breakdown)
        .map_err(|e| CliError::Input(e.to_string()))?;
    say!("{}", serde_json::to_string(&breakdown).expect("breakdown serializes"));
    Ok(breakdown)
}

pub fn plot(args: &PlotArgs) -> Result<(), CliError> {
    if args.width == 0 || args.height == 0 {
        return Err(CliError::Config("plot width and height must be >= 1".into()));
    }
    let ts = load_input(&args.input)?;
    let verdicts: Vec<AnomalyVerdict> = match &args.verdicts {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    let size = PlotSize {
        width: args.width,
        height: args.height,
    };
    write_file(&args.out, render_svg(&ts.values, ts.labels.as_deref(), &verdicts, size))?;
    Ok(())
}

