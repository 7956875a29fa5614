//! Frequency/MIDI conversion and f0 estimation of spectral templates by
//! autocorrelation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Lowest and highest f0 considered by [`estimate_f0`], in Hz.
pub const F0_SEARCH_RANGE: (f64, f64) = (25.0, 4500.0);

pub const DEFAULT_SALIENCE_THRESHOLD: f64 = 0.2;

/// `round(69 + 12 log2(f / 440))`, halves rounding up.
pub fn freq_to_midi(f_hz: f64) -> Result<i64> {
    if !(f_hz > 0.0 && f_hz.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frequency must be positive, got {f_hz}"
        )));
    }
    let semis = 69.0 + 12.0 * (f_hz / 440.0).log2();
    // absorbs log2 rounding at exact half-semitone boundaries
    Ok((semis + 0.5 + 1e-9).floor() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    pub f0_hz: f64,
    pub midi: i64,
    /// Autocorrelation at the chosen lag over the zero-lag value.
    pub salience: f64,
    pub is_note: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub salience_threshold: f64,
    /// Autocorrelate the magnitude itself instead of its square.
    pub use_magnitude: bool,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            salience_threshold: DEFAULT_SALIENCE_THRESHOLD,
            use_magnitude: false,
        }
    }
}

/// Lag oversampling of the autocorrelation searched by [`estimate_f0`].
pub const LAG_UPSAMPLING: usize = 8;

/// Autocorrelation (in samples of lag) of the signal whose one-sided
/// spectrum is `template`: the real inverse DFT of the power spectrum.
pub fn spectral_autocorrelation(template: &[f64], frame_len: usize, use_magnitude: bool) -> Vec<f64> {
    autocorrelation_upsampled(template, frame_len, use_magnitude, 1)
}

/// [`spectral_autocorrelation`] evaluated every `1/factor` samples of lag,
/// by zero-padding the spectrum.
fn autocorrelation_upsampled(template: &[f64], frame_len: usize, use_magnitude: bool, factor: usize) -> Vec<f64> {
    let m = frame_len * factor;
    let mut spec = vec![Complex::new(0.0, 0.0); m];
    for (k, &v) in template.iter().enumerate().take(frame_len / 2 + 1) {
        let p = if use_magnitude { v } else { v * v };
        if k == 0 {
            spec[0] = Complex::new(p, 0.0);
        } else if 2 * k == frame_len {
            // the Nyquist bin is shared between the two halves
            spec[k] += Complex::new(0.5 * p, 0.0);
            spec[m - k] += Complex::new(0.5 * p, 0.0);
        } else {
            spec[k] = Complex::new(p, 0.0);
            spec[m - k] = Complex::new(p, 0.0);
        }
    }
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(m);
    ifft.process(&mut spec);
    spec.iter().map(|c| c.re / frame_len as f64).collect()
}

/// Estimates the f0 of a note template (one-sided spectrum of a
/// `frame_len`-sample analysis frame).
///
/// The autocorrelation is evaluated on a lag grid [`LAG_UPSAMPLING`] times
/// finer than the sample period, since integer lags favour the period
/// multiple that happens to fall nearest a whole sample. The central lobe
/// around lag 0 is skipped (up to its first non-positive value or first
/// local minimum), then the highest value over the lags of 25-4500 Hz picks
/// the period, refined by parabolic interpolation.
pub fn estimate_f0(template: &[f64], sample_rate: u32, frame_len: usize, cfg: &PitchConfig) -> Result<PitchEstimate> {
    if template.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("template must be finite and nonnegative".into()));
    }
    if template.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("all-zero template".into()));
    }
    if template.len() != frame_len / 2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "template has {} bins, frame of {frame_len} samples needs {}",
            template.len(),
            frame_len / 2 + 1
        )));
    }
    let u = LAG_UPSAMPLING;
    let r = autocorrelation_upsampled(template, frame_len, cfg.use_magnitude, u);
    let sr = sample_rate as f64;
    let half = frame_len / 2 * u;
    let min_lag = ((sr * u as f64 / F0_SEARCH_RANGE.1).floor() as usize).max(1);
    let max_lag = ((sr * u as f64 / F0_SEARCH_RANGE.0).ceil() as usize).min(half);

    let mut lobe_end = 1;
    while lobe_end < half && r[lobe_end] > 0.0 && r[lobe_end] < r[lobe_end - 1] {
        lobe_end += 1;
    }
    let start = min_lag.max(lobe_end);
    let zero = r[0];
    if start > max_lag || zero <= 0.0 {
        let f = sr * u as f64 / max_lag.max(1) as f64;
        return Ok(PitchEstimate {
            f0_hz: f,
            midi: freq_to_midi(f)?,
            salience: 0.0,
            is_note: false,
        });
    }
    // near-ties (every multiple of an exact period) go to the shortest lag
    let peak = r[start..=max_lag].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * zero;
    let best = (start..=max_lag)
        .find(|&l| r[l] >= peak - tol)
        .expect("nonempty lag range");
    let mut lag = best as f64;
    if best > 1 && best + 1 < r.len() {
        let (y0, y1, y2) = (r[best - 1], r[best], r[best + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        if denom < 0.0 {
            lag += (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
        }
    }
    let f0 = sr * u as f64 / lag;
    let salience = (r[best] / zero).clamp(0.0, 1.0);
    Ok(PitchEstimate {
        f0_hz: f0,
        midi: freq_to_midi(f0)?,
        salience,
        is_note: salience >= cfg.salience_threshold,
    })
}

/// MIDI label for every column of `w` (`F x R`): the estimated pitch when
/// the column is salient enough and inside the piano range, else `None`.
pub fn label_templates(
    w: &ndarray::ArrayView2<'_, f64>,
    sample_rate: u32,
    frame_len: usize,
    cfg: &PitchConfig,
) -> Vec<Option<u8>> {
    w.columns()
        .into_iter()
        .map(|col| {
            let est = estimate_f0(&col.to_vec(), sample_rate, frame_len, cfg).ok()?;
            let midi = u8::try_from(est.midi).ok()?;
            (est.is_note && crate::notes::PIANO_RANGE.contains(&midi)).then_some(midi)
        })
        .collect()
}
