//! Statistical reference detectors: FFT low-pass residual, spectral residual
//! saliency, and mean-plus-k-sigma thresholding.

mod spectrum;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{mean, std_pop};
use crate::series::TimeSeries;

pub use spectrum::{forward, inverse};

pub const MIN_SERIES_LEN: usize = 8;
/// Guards `ln(0)` in the spectral residual log-amplitude.
pub const SR_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("series too short: need at least {MIN_SERIES_LEN} points, got {0}")]
    SeriesTooShort(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Non-negative per-point anomaly scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Fft,
    Sr,
}

impl BaselineMethod {
    pub fn score(self, series: &TimeSeries) -> Result<ScoreSeries, BaselineError> {
        match self {
            BaselineMethod::Fft => fft_ad_score(series, 0.1),
            BaselineMethod::Sr => spectral_residual_score(series, 3),
        }
    }
}

pub fn fft_ad_score(series: &TimeSeries, keep_fraction: f64) -> Result<ScoreSeries, BaselineError> {
    Ok(ScoreSeries {
        scores: fft_residual(&series.values, keep_fraction)?,
        method: "fft".into(),
    })
}

/// `|x - lowpass(x)|`, where the low-pass keeps the DC bin plus the lowest
/// `ceil(keep_fraction * T / 2)` positive frequencies and their conjugates.
pub fn fft_residual(values: &[f64], keep_fraction: f64) -> Result<Vec<f64>, BaselineError> {
    let t = values.len();
    if t < MIN_SERIES_LEN {
        return Err(BaselineError::SeriesTooShort(t));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(BaselineError::InvalidParameter(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let kept = lowpass_bins(t, keep_fraction);
    let mut spec = forward(values);
    for (k, c) in spec.iter_mut().enumerate() {
        if k.min(t - k) > kept {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let smooth = inverse(&spec);
    Ok(values
        .iter()
        .zip(&smooth)
        .map(|(x, s)| (x - s.re).abs())
        .collect())
}

/// Number of positive frequency bins the FFT-AD low-pass keeps.
pub fn lowpass_bins(t: usize, keep_fraction: f64) -> usize {
    (keep_fraction * t as f64 / 2.0).ceil() as usize
}

pub fn spectral_residual_score(
    series: &TimeSeries,
    avg_window: usize,
) -> Result<ScoreSeries, BaselineError> {
    Ok(ScoreSeries {
        scores: spectral_residual(&series.values, avg_window)?,
        method: "sr".into(),
    })
}

/// Spectral residual saliency map.
///
/// `A = |F(x)|`, `L = ln(A + eps)`, `R = L - avg(L)`, saliency is
/// `|F^-1(exp(R) * phase(F(x)))|`. The moving average is the trailing mean
/// over `avg_window` bins (shorter at the start of the spectrum). A flat
/// series has no spectral structure and gets an all-zero map.
pub fn spectral_residual(values: &[f64], avg_window: usize) -> Result<Vec<f64>, BaselineError> {
    let t = values.len();
    if t < MIN_SERIES_LEN {
        return Err(BaselineError::SeriesTooShort(t));
    }
    if avg_window == 0 {
        return Err(BaselineError::InvalidParameter("avg_window must be >= 1".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
        return Ok(vec![0.0; t]);
    }

    let spec = forward(values);
    let log_amp: Vec<f64> = spec.iter().map(|c| (c.norm() + SR_EPSILON).ln()).collect();
    let avg = trailing_average(&log_amp, avg_window);
    let residual: Vec<Complex64> = spec
        .iter()
        .zip(log_amp.iter().zip(&avg))
        .map(|(c, (l, a))| {
            let mag = (l - a).exp();
            let norm = c.norm();
            if norm > 0.0 {
                c * (mag / norm)
            } else {
                Complex64::new(mag, 0.0)
            }
        })
        .collect();
    Ok(inverse(&residual).iter().map(|c| c.norm()).collect())
}

/// Trailing moving average; the first `n-1` entries average the available prefix.
pub(crate) fn trailing_average(values: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= n {
            acc -= values[i - n];
        }
        out.push(acc / (i + 1).min(n) as f64);
    }
    out
}

/// Flags `score_i > mean + k * std` (population std over all scores).
pub fn threshold_mu_3sigma(scores: &ScoreSeries, k: f64) -> Vec<u8> {
    threshold_values(&scores.scores, k)
}

pub fn threshold_values(scores: &[f64], k: f64) -> Vec<u8> {
    let mu = mean(scores);
    let sigma = std_pop(scores);
    let cut = mu + k * sigma;
    scores.iter().map(|&s| u8::from(s > cut)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(T^2) transform, kept independent of the FFT path.
    fn dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let t = x.len();
        (0..t)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(n, v)| {
                        let ang = sign * 2.0 * std::f64::consts::PI * (k * n) as f64 / t as f64;
                        v * Complex64::new(ang.cos(), ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn oracle_fft_residual(values: &[f64], keep: f64) -> Vec<f64> {
        let t = values.len();
        let m = (keep * t as f64 / 2.0).ceil() as usize;
        let x: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut spec = dft(&x, -1.0);
        for k in 0..t {
            if k.min(t - k) > m {
                spec[k] = Complex64::new(0.0, 0.0);
            }
        }
        let back = dft(&spec, 1.0);
        values
            .iter()
            .zip(back)
            .map(|(v, b)| (v - b.re / t as f64).abs())
            .collect()
    }

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new("b", values, None).unwrap()
    }

    fn argmax(xs: &[f64]) -> usize {
        xs.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn fft_constant_is_zero() {
        let s = fft_ad_score(&series(vec![3.5; 64]), 0.1).unwrap();
        assert!(s.scores.iter().all(|v| *v <= 1e-9));
    }

    #[test]
    fn fft_low_frequency_sinusoid_passes() {
        let t = 100;
        let v: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / (t as f64 / 2.0)).sin())
            .collect();
        let s = fft_residual(&v, 0.1).unwrap();
        assert!(s.iter().cloned().fold(0.0, f64::max) <= 1e-6);
    }

    #[test]
    fn fft_spike_argmax_and_oracle_agreement() {
        let mut v = vec![1.0; 90];
        v[37] += 10.0;
        let fast = fft_residual(&v, 0.1).unwrap();
        assert_eq!(argmax(&fast), 37);
        let slow = oracle_fft_residual(&v, 0.1);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fft_full_band_is_identity() {
        for t in [8, 9, 50, 101] {
            let v: Vec<f64> = (0..t).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            assert!(fft_residual(&v, 1.0).unwrap().iter().all(|s| *s <= 1e-9), "T={t}");
        }
    }

    #[test]
    fn fft_rejects_short_series() {
        assert_eq!(
            fft_residual(&[1.0; 7], 0.1),
            Err(BaselineError::SeriesTooShort(7))
        );
        assert!(fft_residual(&[1.0; 10], 0.0).is_err());
    }

    #[test]
    fn sr_constant_is_flat() {
        let s = spectral_residual(&[2.0; 100], 3).unwrap();
        let first = s[0];
        assert!(s.iter().all(|v| (v - first).abs() <= 1e-9));
    }

    #[test]
    fn sr_two_spikes() {
        let mut v = vec![0.0; 100];
        v[20] = 10.0;
        v[80] = 10.0;
        let s = spectral_residual(&v, 3).unwrap();
        let mut idx: Vec<usize> = (0..100).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut top = [idx[0], idx[1]];
        top.sort();
        assert!(top[0].abs_diff(20) <= 2 && top[1].abs_diff(80) <= 2, "{top:?}");
    }

    #[test]
    fn trailing_average_prefix() {
        assert_eq!(
            trailing_average(&[3.0, 6.0, 9.0, 12.0], 3),
            vec![3.0, 4.5, 6.0, 9.0]
        );
    }

    #[test]
    fn threshold_examples() {
        let mut v = vec![0.0; 99];
        v.push(10.0);
        let flags = threshold_values(&v, 3.0);
        assert_eq!(flags.iter().map(|&f| f as usize).sum::<usize>(), 1);
        assert_eq!(flags[99], 1);

        assert_eq!(threshold_values(&[0.0, 0.0, 0.0, 0.0, 1.0], 3.0), vec![0; 5]);
        assert_eq!(threshold_values(&[2.0; 6], 3.0), vec![0; 6]);
    }

    proptest::proptest! {
        #[test]
        fn threshold_monotone_in_k(
            scores in proptest::collection::vec(0.0f64..10.0, 2..60),
            k1 in 0.0f64..4.0,
            dk in 0.0f64..3.0,
        ) {
            let lo = threshold_values(&scores, k1);
            let hi = threshold_values(&scores, k1 + dk);
            for (a, b) in lo.iter().zip(&hi) {
                proptest::prop_assert!(b <= a);
            }
        }

        #[test]
        fn sr_argmax_scale_invariant(
            noise in proptest::collection::vec(-1.0f64..1.0, 64),
            spike_at in 5usize..59,
            c in 0.01f64..100.0,
        ) {
            let mut v = noise.clone();
            v[spike_at] += 12.0;
            let a = spectral_residual(&v, 3).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let b = spectral_residual(&scaled, 3).unwrap();
            proptest::prop_assert_eq!(argmax(&a), argmax(&b));
        }
    }
}
