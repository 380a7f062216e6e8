use serde::{Deserialize, Serialize};

use super::{float_or_inf, Scope, ToolError, ToolPayload, ToolResult};
use crate::numeric::{is_degenerate_spread, least_squares, mean, std_pop};
use crate::series::Window;

/// Minimum circular autocorrelation for a lag to count as the period.
pub const PERIOD_MIN_CORRELATION: f64 = 0.5;
/// A split counts as a level shift when its mean gap is at least this many
/// pooled standard deviations.
pub const SHIFT_GAP_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub scope: Scope,
    /// Absolute, inclusive range the report describes.
    pub span: [usize; 2],
    pub trend_slope: f64,
    pub dominant_period: Option<usize>,
    /// Absolute index of the first point after the shift.
    pub level_shift_index: Option<usize>,
    /// Mean absolute deviation of the interval from its flanking context,
    /// in context standard deviations. `inf` when the context is flat.
    #[serde(with = "float_or_inf")]
    pub context_deviation: Option<f64>,
}

/// Trend, periodicity and level shift over the whole window.
pub fn global_structure(window: &Window) -> Result<ToolResult, ToolError> {
    let v = &window.values;
    if v.len() < 8 {
        return Err(ToolError::WindowTooShort {
            needed: 8,
            got: v.len(),
        });
    }
    let (slope, intercept) = least_squares(v);
    let residual: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, y)| y - (slope * i as f64 + intercept))
        .collect();
    let report = StructureReport {
        scope: Scope::Global,
        span: [window.start, window.last()],
        trend_slope: slope,
        dominant_period: dominant_period(&residual),
        level_shift_index: level_shift(v).map(|s| window.start + s),
        context_deviation: None,
    };
    Ok(ToolResult::new(
        "global_structure",
        Some(report.span),
        ToolPayload::Structure(report),
    ))
}

/// Lag in `2..=n/2` maximizing the circular autocorrelation, if it reaches
/// [`PERIOD_MIN_CORRELATION`]. Ties go to the shortest lag.
pub(crate) fn dominant_period(values: &[f64]) -> Option<usize> {
    let n = values.len();
    let mu = mean(values);
    let centered: Vec<f64> = values.iter().map(|x| x - mu).collect();
    let energy: f64 = centered.iter().map(|x| x * x).sum();
    let scale = centered.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if is_degenerate_spread(energy.sqrt(), scale) || scale == 0.0 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for lag in 2..=n / 2 {
        let r = (0..n)
            .map(|i| centered[i] * centered[(i + lag) % n])
            .sum::<f64>()
            / energy;
        if best.is_none_or(|(_, b)| r > b + 1e-9) {
            best = Some((lag, r));
        }
    }
    best.filter(|&(_, r)| r >= PERIOD_MIN_CORRELATION)
        .map(|(lag, _)| lag)
}

/// Split maximizing the gap between left and right means. Each side keeps
/// at least `max(2, n/10)` points so edge noise cannot pose as a shift.
pub(crate) fn level_shift(values: &[f64]) -> Option<usize> {
    let n = values.len();
    let min_side = (n / 10).max(2);
    if n < 2 * min_side {
        return None;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for s in min_side..=n - min_side {
        let (left, right) = values.split_at(s);
        let (ml, mr) = (mean(left), mean(right));
        let gap = (mr - ml).abs();
        let ss: f64 = left.iter().map(|x| (x - ml).powi(2)).sum::<f64>()
            + right.iter().map(|x| (x - mr).powi(2)).sum::<f64>();
        let pooled = (ss / n as f64).sqrt();
        if best.is_none_or(|(_, g, _)| gap > g + 1e-12) {
            best = Some((s, gap, pooled));
        }
    }
    let scale = values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    best.filter(|&(_, gap, pooled)| {
        !is_degenerate_spread(gap, scale) && gap >= SHIFT_GAP_FACTOR * pooled
    })
    .map(|(s, _, _)| s)
}

/// Structure of the window-relative interval `[start, end)` against its
/// flanking context: `end - start` points on each side, clipped to the window.
pub fn local_structure(window: &Window, start: usize, end: usize) -> Result<ToolResult, ToolError> {
    let v = &window.values;
    let n = v.len();
    if start >= end || end > n {
        return Err(ToolError::IntervalOutOfBounds {
            start,
            end,
            len: n,
        });
    }
    let width = end - start;
    let context: Vec<f64> = v[start.saturating_sub(width)..start]
        .iter()
        .chain(&v[end..(end + width).min(n)])
        .copied()
        .collect();
    if context.is_empty() {
        return Err(ToolError::EmptyContext { start, end });
    }
    let interval = &v[start..end];
    let ctx_mean = mean(&context);
    let ctx_std = std_pop(&context);
    let mad = interval.iter().map(|x| (x - ctx_mean).abs()).sum::<f64>() / width as f64;
    let scale = context
        .iter()
        .chain(interval)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    let deviation = if !is_degenerate_spread(ctx_std, scale) {
        mad / ctx_std
    } else if is_degenerate_spread(mad, scale) {
        0.0
    } else {
        f64::INFINITY
    };
    let report = StructureReport {
        scope: Scope::Local,
        span: [window.start + start, window.start + end - 1],
        trend_slope: least_squares(interval).0,
        dominant_period: None,
        level_shift_index: None,
        context_deviation: Some(deviation),
    };
    Ok(ToolResult::new(
        "local_structure",
        Some(report.span),
        ToolPayload::Structure(report),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn report(r: ToolResult) -> StructureReport {
        match r.payload {
            ToolPayload::Structure(s) => s,
            other => panic!("unexpected payload {other:?}"),
        }
    }

    /// Reference circular autocorrelation computed without detrending or
    /// tie-breaking shortcuts.
    fn oracle_autocorr(v: &[f64], lag: usize) -> f64 {
        let n = v.len();
        let mu = v.iter().sum::<f64>() / n as f64;
        let num: f64 = (0..n).map(|i| (v[i] - mu) * (v[(i + lag) % n] - mu)).sum();
        let den: f64 = v.iter().map(|x| (x - mu).powi(2)).sum();
        num / den
    }

    #[test]
    fn sinusoid_period() {
        let v: Vec<f64> = (0..100)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 20.0).sin())
            .collect();
        let lags: Vec<f64> = (2..=50).map(|l| oracle_autocorr(&v, l)).collect();
        let oracle_best = 2 + lags
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &r)| if r > acc.1 + 1e-9 { (i, r) } else { acc })
            .0;
        assert_eq!(oracle_best, 20);

        let r = report(global_structure(&Window::new("w", 0, v)).unwrap());
        assert_eq!(r.dominant_period, Some(20));
        assert!(r.trend_slope.abs() < 1e-2);
        assert_eq!(r.level_shift_index, None);
    }

    #[test]
    fn constant_has_no_structure() {
        let r = report(global_structure(&Window::new("w", 0, vec![0.3; 40])).unwrap());
        assert_eq!(r.dominant_period, None);
        assert_eq!(r.level_shift_index, None);
        assert_eq!(r.trend_slope, 0.0);
    }

    #[test]
    fn step_shift() {
        let mut v = vec![0.0; 50];
        v.extend(vec![10.0; 50]);
        let r = report(global_structure(&Window::new("w", 300, v)).unwrap());
        assert_eq!(r.level_shift_index, Some(350));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            global_structure(&Window::new("w", 0, vec![1.0; 7])),
            Err(ToolError::WindowTooShort { needed: 8, got: 7 })
        ));
    }

    #[test]
    fn local_flat_context_is_infinite() {
        let mut v = vec![0.0; 40];
        v.extend(vec![10.0; 20]);
        v.extend(vec![0.0; 40]);
        let r = report(local_structure(&Window::new("w", 0, v), 40, 60).unwrap());
        assert_eq!(r.context_deviation, Some(f64::INFINITY));
        assert_eq!(r.span, [40, 59]);
    }

    #[test]
    fn local_matching_context_is_zero() {
        let r = report(local_structure(&Window::new("w", 0, vec![1.5; 30]), 10, 20).unwrap());
        assert_eq!(r.context_deviation, Some(0.0));
    }

    #[test]
    fn local_bounds() {
        let w = Window::new("w", 0, vec![1.0; 10]);
        assert!(matches!(
            local_structure(&w, 5, 11),
            Err(ToolError::IntervalOutOfBounds { .. })
        ));
        assert!(matches!(
            local_structure(&w, 4, 4),
            Err(ToolError::IntervalOutOfBounds { .. })
        ));
        assert!(matches!(
            local_structure(&w, 0, 10),
            Err(ToolError::EmptyContext { .. })
        ));
    }

    #[test]
    fn local_shift_monte_carlo() {
        // Interval mean shifted by +5 sigma: deviation should sit near 5.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut total = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..100).map(|_| normal.sample(&mut rng)).collect();
            v[40..60].iter_mut().for_each(|x| *x += 5.0);
            let r = report(local_structure(&Window::new("w", 0, v), 40, 60).unwrap());
            let d = r.context_deviation.unwrap();
            assert!(d.is_finite() && d > 0.0, "seed {seed}: {d}");
            total += d;
        }
        let estimate = total / 100.0;
        assert!((estimate - 5.0).abs() <= 1.5, "{estimate}");
    }

    proptest::proptest! {
        #[test]
        fn period_bounds(v in proptest::collection::vec(-5.0f64..5.0, 8..80)) {
            let r = report(global_structure(&Window::new("w", 0, v.clone())).unwrap());
            if let Some(p) = r.dominant_period {
                proptest::prop_assert!(p >= 2 && p <= v.len() / 2);
            }
        }
    }
}
