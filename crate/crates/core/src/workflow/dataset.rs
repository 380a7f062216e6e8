use serde::Serialize;

use super::episode::EpisodeFailure;
use super::trace::EpisodeTrace;
use super::{Workflow, WorkflowError};
use crate::protocol::AnomalyVerdict;
use crate::series::{prepare_window, segment_windows, TimeSeries};

/// A window whose episode failed. The rest of the series is unaffected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowFailure {
    pub start: usize,
    pub error: String,
    /// The episode stopped on a backend error rather than a bad reply.
    pub backend: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetRun {
    /// Point labels over the whole series: the union of all verdicts.
    pub labels: Vec<u8>,
    /// All verdicts in absolute indices, sorted by interval.
    pub verdicts: Vec<AnomalyVerdict>,
    /// One trace per window, failed windows included, in window order.
    pub traces: Vec<EpisodeTrace>,
    pub failures: Vec<WindowFailure>,
}

impl Workflow {
    /// Segments the series and runs one episode per window, in parallel
    /// when the configured execution allows.
    pub fn run_dataset(&self, series: &TimeSeries) -> Result<DatasetRun, WorkflowError> {
        let windows = segment_windows(series, self.config.segmentation)?;
        let detrend = self.config.detrend;
        let results = self.config.execution.map(&windows, |w| {
            self.run_episode(&prepare_window(w, detrend))
        });

        let mut labels = vec![0u8; series.len()];
        let mut verdicts = Vec::new();
        let mut traces = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(run) => {
                    for v in &run.verdicts {
                        let e = v.end().min(series.len().saturating_sub(1));
                        if v.start() <= e {
                            labels[v.start()..=e].fill(1);
                        }
                    }
                    verdicts.extend(run.verdicts);
                    traces.push(run.trace);
                }
                Err(f) => {
                    let EpisodeFailure { error, trace } = *f;
                    failures.push(WindowFailure {
                        start: trace.window.start,
                        backend: matches!(error, WorkflowError::Backend { .. }),
                        error: error.to_string(),
                    });
                    traces.push(trace);
                }
            }
        }
        verdicts.sort_by(|a, b| a.interval.cmp(&b.interval).then_with(|| a.kind.cmp(&b.kind)));
        Ok(DatasetRun {
            labels,
            verdicts,
            traces,
            failures,
        })
    }
}
