//! Synthetic scores: harmonic-note rendering and simple stereo mixing.

use std::str::FromStr;

use amt_core::evalx::{parse_note_table, TruthFormat};
use amt_core::notes::NoteEvent;
use amt_core::signal::{synth_note, AudioClip};

use crate::{CliError, CliResult};

/// How the mono render is spread over channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StereoModel {
    Mono,
    /// Channel `k` is the render times [`CHANNEL_GAINS`]`[k]`.
    Gains,
    /// Channel 0 is the render; channel 1 is the render through
    /// [`lowpass_taps`].
    Filters,
}

pub const CHANNEL_GAINS: [f64; 2] = [1.0, 0.5];

/// Pole of the second channel's lowpass, and its truncation length.
pub const LOWPASS_POLE: f64 = 0.6;
pub const LOWPASS_TAPS: usize = 12;

/// Truncated one-pole lowpass `a^n`, scaled to unit gain at DC. Its gain
/// falls from 1 at DC to about 0.25 at Nyquist.
pub fn lowpass_taps() -> Vec<f64> {
    let taps: Vec<f64> = (0..LOWPASS_TAPS).map(|n| LOWPASS_POLE.powi(n as i32)).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

impl FromStr for StereoModel {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mono" => Ok(StereoModel::Mono),
            "gains" => Ok(StereoModel::Gains),
            "filters" => Ok(StereoModel::Filters),
            other => Err(CliError::Config(format!(
                "stereo model {other:?}: expected mono, gains or filters"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub sample_rate: u32,
    pub n_partials: usize,
    pub decay_rate: f64,
    /// Linear fade at the end of every note.
    pub release_s: f64,
    /// Silence appended after the last offset.
    pub tail_s: f64,
    /// Peak level of the final mix.
    pub peak: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_partials: 8,
            decay_rate: 1.5,
            release_s: 0.01,
            tail_s: 0.5,
            peak: 0.9,
        }
    }
}

pub fn parse_score(text: &str) -> CliResult<Vec<NoteEvent>> {
    Ok(parse_note_table(text, TruthFormat::Tsv)?)
}

/// One note from its onset to its offset, with a short release.
pub fn render_event(ev: &NoteEvent, p: &SynthParams) -> CliResult<Vec<f64>> {
    let mut tone = synth_note(
        ev.midi as i64,
        ev.offset_s - ev.onset_s,
        p.sample_rate,
        p.n_partials,
        p.decay_rate,
    )?;
    let fade = ((p.release_s * p.sample_rate as f64) as usize).min(tone.len());
    let n = tone.len();
    for (i, v) in tone[n - fade..].iter_mut().enumerate() {
        *v *= 1.0 - (i + 1) as f64 / fade as f64;
    }
    Ok(tone)
}

/// Unnormalized sum of all note renders at their onsets.
pub fn render_mix(events: &[NoteEvent], p: &SynthParams) -> CliResult<Vec<f64>> {
    let end = events.iter().map(|e| e.offset_s).fold(0.0, f64::max) + p.tail_s;
    let sr = p.sample_rate as f64;
    let mut out = vec![0.0; (end * sr).ceil() as usize];
    for ev in events {
        let start = (ev.onset_s * sr).round() as usize;
        for (o, v) in out[start..].iter_mut().zip(render_event(ev, p)?) {
            *o += v;
        }
    }
    Ok(out)
}

fn fir(x: &[f64], taps: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter(|(k, _)| *k <= n)
                .map(|(k, t)| t * x[n - k])
                .sum()
        })
        .collect()
}

/// Spreads a mono signal over channels according to `model`.
pub fn spatialize(mono: &[f64], model: StereoModel) -> Vec<Vec<f64>> {
    match model {
        StereoModel::Mono => vec![mono.to_vec()],
        StereoModel::Gains => CHANNEL_GAINS
            .iter()
            .map(|g| mono.iter().map(|v| v * g).collect())
            .collect(),
        StereoModel::Filters => vec![mono.to_vec(), fir(mono, &lowpass_taps())],
    }
}

fn normalize(channels: &mut [Vec<f64>], peak: f64) {
    let max = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        channels.iter_mut().flatten().for_each(|v| *v *= g);
    }
}

/// Renders a score, spreads it over channels and scales the result to the
/// configured peak.
pub fn render_score(events: &[NoteEvent], model: StereoModel, p: &SynthParams) -> CliResult<AudioClip> {
    if events.is_empty() {
        return Err(CliError::Config("score has no notes".into()));
    }
    let mut channels = spatialize(&render_mix(events, p)?, model);
    normalize(&mut channels, p.peak);
    Ok(AudioClip::new(channels, p.sample_rate)?)
}

/// One isolated clip per pitch, rendered like a score of a single note.
pub fn render_isolated_notes(
    midis: &[u8],
    duration_s: f64,
    model: StereoModel,
    p: &SynthParams,
) -> CliResult<Vec<(AudioClip, u8)>> {
    midis
        .iter()
        .map(|&m| {
            let ev = NoteEvent::new(m, 0.0, duration_s)?;
            Ok((render_score(&[ev], model, p)?, m))
        })
        .collect()
}
