use serde::{Deserialize, Serialize};

use super::{ToolError, ToolPayload, ToolResult};
use crate::numeric::{mean, quantile_sorted, std_pop};
use crate::series::Window;

/// Population statistics of a window; quantiles by linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

impl StatSummary {
    pub fn of(values: &[f64]) -> Result<Self, ToolError> {
        if values.len() < 2 {
            return Err(ToolError::WindowTooShort {
                needed: 2,
                got: values.len(),
            });
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let q3 = quantile_sorted(&sorted, 0.75);
        Ok(Self {
            mean: mean(values),
            std: std_pop(values),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: quantile_sorted(&sorted, 0.5),
            iqr: (q3 - q1).max(0.0),
            n: values.len(),
        })
    }
}

pub fn stat_features(window: &Window) -> Result<ToolResult, ToolError> {
    let summary = StatSummary::of(&window.values)?;
    Ok(ToolResult::new(
        "stat_features",
        Some([window.start, window.last()]),
        ToolPayload::Stats(summary),
    ))
}
