use serde::{Deserialize, Serialize};

use super::{Scope, ToolError, ToolPayload, ToolResult};
use crate::numeric::{is_degenerate_spread, mean, std_pop};
use crate::series::Window;

/// Z-scores of first differences.
///
/// Score index `i` is absolute and refers to the jump `v[i+1] - v[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreReport {
    pub scope: Scope,
    pub scores: Vec<(usize, f64)>,
    pub outlier_indices: Vec<usize>,
    pub threshold: f64,
    /// Set when any standardizing spread was zero; those points score 0.
    pub degenerate: bool,
}

/// Difference Z-scores, standardized against all differences (`Global`) or
/// against the differences within `radius` of each point, excluding itself
/// (`Local`).
pub fn diff_zscore(
    window: &Window,
    scope: Scope,
    radius: usize,
    threshold: f64,
) -> Result<ToolResult, ToolError> {
    let report = diff_zscore_report(window, scope, radius, threshold)?;
    Ok(ToolResult::new(
        "diff_zscore",
        Some([window.start, window.last()]),
        ToolPayload::ZScore(report),
    ))
}

pub(crate) fn diff_zscore_report(
    window: &Window,
    scope: Scope,
    radius: usize,
    threshold: f64,
) -> Result<ZScoreReport, ToolError> {
    let v = &window.values;
    if v.len() < 3 {
        return Err(ToolError::WindowTooShort {
            needed: 3,
            got: v.len(),
        });
    }
    if scope == Scope::Local && radius < 2 {
        return Err(ToolError::ParamValidation {
            tool: "diff_zscore".into(),
            reason: "local radius must be >= 2".into(),
        });
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(ToolError::ParamValidation {
            tool: "diff_zscore".into(),
            reason: "threshold must be finite and >= 0".into(),
        });
    }
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let m = diffs.len();
    let mut degenerate = false;

    let z: Vec<f64> = match scope {
        Scope::Global => {
            let mu = mean(&diffs);
            let sd = std_pop(&diffs);
            let scale = diffs.iter().map(|d| d.abs()).fold(0.0, f64::max);
            if is_degenerate_spread(sd, scale) {
                degenerate = true;
                vec![0.0; m]
            } else {
                diffs.iter().map(|d| (d - mu) / sd).collect()
            }
        }
        Scope::Local => {
            let mut out = Vec::with_capacity(m);
            let mut neighbours = Vec::with_capacity(2 * radius);
            for i in 0..m {
                neighbours.clear();
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(m - 1);
                neighbours.extend((lo..=hi).filter(|&j| j != i).map(|j| diffs[j]));
                let mu = mean(&neighbours);
                let sd = std_pop(&neighbours);
                let scale = neighbours
                    .iter()
                    .chain(std::iter::once(&diffs[i]))
                    .map(|d| d.abs())
                    .fold(0.0, f64::max);
                if neighbours.is_empty() || is_degenerate_spread(sd, scale) {
                    degenerate = true;
                    out.push(0.0);
                } else {
                    out.push((diffs[i] - mu) / sd);
                }
            }
            out
        }
    };

    let scores: Vec<(usize, f64)> = z
        .iter()
        .enumerate()
        .map(|(i, &z)| (window.start + i, z))
        .collect();
    let outlier_indices = scores
        .iter()
        .filter(|(_, z)| z.abs() >= threshold && *z != 0.0)
        .map(|(i, _)| *i)
        .collect();
    Ok(ZScoreReport {
        scope,
        scores,
        outlier_indices,
        threshold,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: Vec<f64>, scope: Scope, threshold: f64) -> ZScoreReport {
        diff_zscore_report(&Window::new("w", 0, v), scope, 10, threshold).unwrap()
    }

    #[test]
    fn single_jump_dominates() {
        let mut v = vec![0.0; 9];
        v.push(100.0);
        let r = report(v, Scope::Global, 2.0);
        let argmax = r
            .scores
            .iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(argmax, 8);
        assert_eq!(r.outlier_indices, vec![8]);
        // One non-zero among nine diffs: z = sqrt(8).
        assert!((r.scores[8].1 - 8f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn flat_and_ramp_are_degenerate() {
        for v in [vec![2.0; 12], (0..10).map(f64::from).collect()] {
            for scope in [Scope::Global, Scope::Local] {
                let r = report(v.clone(), scope, 3.0);
                assert!(r.degenerate);
                assert!(r.outlier_indices.is_empty());
                assert!(r.scores.iter().all(|(_, z)| *z == 0.0));
            }
        }
    }

    #[test]
    fn absolute_indices() {
        let mut v = vec![0.0, 0.1, 0.0, 0.1, 0.0, 0.1, 5.0, 0.0, 0.1, 0.0, 0.1, 0.0];
        v.extend([0.1, 0.0, 0.1, 0.0]);
        let r = diff_zscore_report(&Window::new("w", 200, v), Scope::Local, 3, 2.0).unwrap();
        assert_eq!(r.scores[0].0, 200);
        assert!(r.outlier_indices.contains(&205));
        assert!(r.outlier_indices.contains(&206));
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = Window::new("w", 0, vec![1.0, 2.0]);
        assert!(matches!(
            diff_zscore_report(&w, Scope::Global, 10, 3.0),
            Err(ToolError::WindowTooShort { .. })
        ));
        let w = Window::new("w", 0, vec![1.0, 2.0, 0.0, 4.0]);
        assert!(diff_zscore_report(&w, Scope::Local, 1, 3.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn global_scores_are_standardized(v in proptest::collection::vec(-100.0f64..100.0, 3..80)) {
            let r = report(v, Scope::Global, 3.0);
            if !r.degenerate {
                let z: Vec<f64> = r.scores.iter().map(|s| s.1).collect();
                proptest::prop_assert!(mean(&z).abs() < 1e-6);
                proptest::prop_assert!((std_pop(&z) - 1.0).abs() < 1e-6);
            }
            for i in &r.outlier_indices {
                let z = r.scores.iter().find(|s| s.0 == *i).unwrap().1;
                proptest::prop_assert!(z.abs() >= r.threshold);
            }
        }

        #[test]
        fn shift_invariant(
            v in proptest::collection::vec(-100.0f64..100.0, 3..60),
            c in -1e3f64..1e3,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for scope in [Scope::Global, Scope::Local] {
                let a = report(v.clone(), scope, 3.0);
                let b = report(shifted.clone(), scope, 3.0);
                for (x, y) in a.scores.iter().zip(&b.scores) {
                    proptest::prop_assert!((x.1 - y.1).abs() < 1e-9, "{} vs {}", x.1, y.1);
                }
            }
        }
    }
}
