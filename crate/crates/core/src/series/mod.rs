//! Univariate series, windows, ingestion and preprocessing.

mod io;
mod preprocess;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_series, parse_series, write_series};
pub use preprocess::{
    denormalize, detrend, normalize, prepare_window, segment_windows, NormalizationParams,
    Segmentation,
};
pub use synth::{generate_synthetic, AnomalyKind, Base, InjectedAnomaly, SynthSpec};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("file not found: {0}")]
    FileMissing(String),
    #[error("parse error at row {row}: {reason}")]
    ParseError { row: usize, reason: String },
    #[error("label column does not cover every row ({labels} labels for {values} values)")]
    LabelLengthMismatch { values: usize, labels: usize },
    #[error("series is constant; min-max scaling is undefined")]
    ConstantSeries,
    #[error("series is empty")]
    EmptySeries,
    #[error("series too short: need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("anomaly at {position} with span {span} does not fit in length {length}")]
    SpanOutOfBounds {
        position: usize,
        span: usize,
        length: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An indexed univariate series. Indices are implicit: `0..len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

impl TimeSeries {
    /// Builds a series, checking finiteness and label length.
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, SeriesError> {
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::ParseError {
                row,
                reason: "non-finite value".into(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(SeriesError::LabelLengthMismatch {
                    values: values.len(),
                    labels: l.len(),
                });
            }
            if let Some(row) = l.iter().position(|&x| x > 1) {
                return Err(SeriesError::ParseError {
                    row,
                    reason: "label must be 0 or 1".into(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        0..self.values.len()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            name: self.name.clone(),
            values,
            labels: self.labels.clone(),
        }
    }
}

/// A contiguous slice `[start, end)` of a parent series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub parent: String,
    pub start: usize,
    pub end: usize,
    pub values: Vec<f64>,
}

impl Window {
    pub fn new(parent: impl Into<String>, start: usize, values: Vec<f64>) -> Self {
        let end = start + values.len();
        Self {
            parent: parent.into(),
            start,
            end,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last absolute index covered by the window.
    pub fn last(&self) -> usize {
        self.end.saturating_sub(1)
    }

    /// Sub-window over window-relative `[from, to)`, keeping absolute offsets.
    pub fn slice(&self, from: usize, to: usize) -> Window {
        Window {
            parent: self.parent.clone(),
            start: self.start + from,
            end: self.start + to,
            values: self.values[from..to].to_vec(),
        }
    }
}
