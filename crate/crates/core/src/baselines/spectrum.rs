use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward DFT of a real sequence, length `T` (no padding).
pub fn forward(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// Inverse DFT, scaled by `1/T`.
pub fn inverse(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    let t = buf.len() as f64;
    FftPlanner::<f64>::new()
        .plan_fft_inverse(buf.len())
        .process(&mut buf);
    buf.iter_mut().for_each(|c| *c /= t);
    buf
}
