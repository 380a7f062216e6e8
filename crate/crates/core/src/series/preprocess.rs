use serde::{Deserialize, Serialize};

use super::{SeriesError, TimeSeries, Window};
use crate::numeric::least_squares;

/// Min and max of the series before scaling: `x' = (x - a) / (b - a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub a: f64,
    pub b: f64,
}

/// Min-max scales a series into `[0, 1]`.
pub fn normalize(series: &TimeSeries) -> Result<(TimeSeries, NormalizationParams), SeriesError> {
    if series.len() < 2 {
        return Err(SeriesError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let a = series.values.iter().copied().fold(f64::INFINITY, f64::min);
    let b = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if b <= a {
        return Err(SeriesError::ConstantSeries);
    }
    let span = b - a;
    let values = series.values.iter().map(|x| (x - a) / span).collect();
    Ok((series.with_values(values), NormalizationParams { a, b }))
}

pub fn denormalize(series: &TimeSeries, params: NormalizationParams) -> TimeSeries {
    let span = params.b - params.a;
    series.with_values(series.values.iter().map(|x| x * span + params.a).collect())
}

/// Subtracts the least-squares line fitted against the index.
pub fn detrend(series: &TimeSeries) -> Result<TimeSeries, SeriesError> {
    if series.len() < 2 {
        return Err(SeriesError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(series.with_values(detrend_values(&series.values)))
}

pub(crate) fn detrend_values(values: &[f64]) -> Vec<f64> {
    let (slope, intercept) = least_squares(values);
    values
        .iter()
        .enumerate()
        .map(|(i, y)| y - (slope * i as f64 + intercept))
        .collect()
}

/// Window length, step, and the minimum length a trailing partial window
/// must have to be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub length: usize,
    pub step: usize,
    pub min_tail: usize,
}

impl Default for Segmentation {
    fn default() -> Self {
        Self {
            length: 100,
            step: 100,
            min_tail: 20,
        }
    }
}

/// Cuts the series into windows starting at `0, step, 2*step, ...`.
///
/// Full-length windows are always kept. The first partial window at the end is
/// kept iff it has at least `min_tail` points. A series shorter than both
/// `length` and `min_tail` yields one window covering it entirely.
pub fn segment_windows(series: &TimeSeries, seg: Segmentation) -> Result<Vec<Window>, SeriesError> {
    if seg.length == 0 || seg.step == 0 {
        return Err(SeriesError::InvalidParameter(
            "window length and step must be >= 1".into(),
        ));
    }
    let t = series.len();
    if t == 0 {
        return Err(SeriesError::EmptySeries);
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start < t {
        let end = start + seg.length;
        if end <= t {
            windows.push(Window::new(&series.name, start, series.values[start..end].to_vec()));
        } else {
            if t - start >= seg.min_tail.min(seg.length) {
                windows.push(Window::new(&series.name, start, series.values[start..].to_vec()));
            }
            break;
        }
        start += seg.step;
    }
    if windows.is_empty() {
        windows.push(Window::new(&series.name, 0, series.values.clone()));
    }
    Ok(windows)
}

/// Per-window preprocessing applied before an episode: optional detrend,
/// then min-max scaling. A flat window maps to all zeros instead of failing,
/// so flat stretches of a long series simply produce no candidates.
pub fn prepare_window(window: &Window, detrend_first: bool) -> Window {
    let mut values = if detrend_first && window.len() >= 2 {
        detrend_values(&window.values)
    } else {
        window.values.clone()
    };
    let a = values.iter().copied().fold(f64::INFINITY, f64::min);
    let b = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = b - a;
    if values.len() < 2 || !(span > 1e-12 * a.abs().max(b.abs()).max(1.0)) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - a) / span);
    }
    Window {
        parent: window.parent.clone(),
        start: window.start,
        end: window.end,
        values,
    }
}
