//! Audio ingestion, magnitude spectrograms and a harmonic test-tone generator.

use std::f64::consts::PI;
use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

pub const MAX_CHANNELS: usize = 8;

/// Multi-channel audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > MAX_CHANNELS {
            return Err(Error::InvalidAudio(format!(
                "{} channels, expected 1..={MAX_CHANNELS}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidAudio("channels differ in length".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Average of all channels.
    pub fn mixdown(&self) -> Vec<f64> {
        let c = self.channels.len() as f64;
        (0..self.len())
            .map(|i| self.channels.iter().map(|ch| ch[i]).sum::<f64>() / c)
            .collect()
    }

    /// Keeps at most the first `seconds` of audio.
    pub fn truncate(&mut self, seconds: f64) {
        let n = (seconds * self.sample_rate as f64).round().max(0.0) as usize;
        for ch in &mut self.channels {
            ch.truncate(n);
        }
    }
}

/// Reads a PCM16 or float32 RIFF/WAVE file.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Decodes an in-memory RIFF/WAVE image. Only 16-bit integer and 32-bit
/// float samples are accepted.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_error)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 || n_channels > MAX_CHANNELS {
        return Err(Error::UnsupportedEncoding(format!("{n_channels} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {}",
                match fmt {
                    hound::SampleFormat::Int => "PCM",
                    hound::SampleFormat::Float => "float",
                }
            )))
        }
    };
    if interleaved.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidAudio("NaN sample".into()));
    }
    let frames = interleaved.len() / n_channels;
    if frames == 0 {
        return Err(Error::InvalidAudio("zero-length audio".into()));
    }
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    AudioClip::new(channels, spec.sample_rate)
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::InvalidAudio(format!("truncated or unreadable: {io}")),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAVE format".into()),
        other => Error::InvalidAudio(other.to_string()),
    }
}

/// Writes 16-bit PCM, clamping samples to `[-1, 1]`.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::InvalidAudio(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for i in 0..clip.len() {
        for ch in clip.channels() {
            let v = (ch[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rect,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len_ms: f64,
    pub hop_fraction: f64,
    pub window: Window,
    /// Square the magnitudes.
    pub power: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 64.0,
            hop_fraction: 0.5,
            window: Window::Hann,
            power: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_len_ms > 0.0 && self.frame_len_ms.is_finite()) {
            return Err(Error::InvalidArgument("frame length must be positive".into()));
        }
        if !(self.hop_fraction > 0.0 && self.hop_fraction <= 1.0) {
            return Err(Error::InvalidArgument("hop fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn frame_len_samples(&self, sample_rate: u32) -> usize {
        ((self.frame_len_ms * sample_rate as f64 / 1000.0).round() as usize).max(2)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.frame_len_samples(sample_rate) as f64 * self.hop_fraction).round() as usize).max(1)
    }
}

/// Nonnegative frequency-by-time magnitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `F x T`, row = frequency bin, column = frame.
    pub data: Array2<f64>,
    pub freq_resolution_hz: f64,
    pub hop_seconds: f64,
    pub sample_rate: u32,
    /// Analysis frame length in samples.
    pub frame_len: usize,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn bin_of(&self, freq_hz: f64) -> usize {
        (freq_hz / self.freq_resolution_hz).round() as usize
    }

    /// Debug export: row = frequency bin, column = frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::csv::write_matrix(path, &self.data)
    }
}

/// One-sided STFT magnitude of a single channel.
///
/// Frame `r` covers samples `r*hop .. r*hop + N`; frames that would run past
/// the end of the signal are dropped.
pub fn stft_magnitude(samples: &[f64], sample_rate: u32, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let n = cfg.frame_len_samples(sample_rate);
    let hop = cfg.hop_samples(sample_rate);
    if samples.len() < n {
        return Err(Error::SignalTooShort {
            len: samples.len(),
            frame: n,
        });
    }
    let n_frames = (samples.len() - n) / hop + 1;
    let n_bins = n / 2 + 1;
    let window = cfg.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Array2::<f64>::zeros((n_bins, n_frames));
    for r in 0..n_frames {
        let frame = &samples[r * hop..r * hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            let mag = buf[k].norm();
            data[[k, r]] = if cfg.power { mag * mag } else { mag };
        }
    }
    Ok(Spectrogram {
        data,
        freq_resolution_hz: sample_rate as f64 / n as f64,
        hop_seconds: hop as f64 / sample_rate as f64,
        sample_rate,
        frame_len: n,
    })
}

/// Independent STFT of every channel.
pub fn stft_channels(clip: &AudioClip, cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
    clip.channels()
        .iter()
        .map(|ch| stft_magnitude(ch, clip.sample_rate(), cfg))
        .collect()
}

pub fn midi_to_freq(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// Exponentially decaying harmonic tone, peak-normalized to 0.9.
///
/// Partial `p` has amplitude `1/p`; partials at or above Nyquist are omitted.
pub fn synth_note(
    midi: i64,
    duration_s: f64,
    sample_rate: u32,
    n_partials: usize,
    decay_rate: f64,
) -> Result<Vec<f64>> {
    if !(21..=108).contains(&midi) {
        return Err(Error::PitchOutOfRange(midi));
    }
    if n_partials == 0 {
        return Err(Error::InvalidArgument("n_partials must be at least 1".into()));
    }
    if !(duration_s > 0.0) || sample_rate == 0 || decay_rate < 0.0 {
        return Err(Error::InvalidArgument(
            "duration and sample rate must be positive, decay nonnegative".into(),
        ));
    }
    let f0 = midi_to_freq(midi as f64);
    let nyquist = sample_rate as f64 / 2.0;
    let len = (duration_s * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut out: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let tone: f64 = (1..=n_partials)
                .take_while(|&p| p as f64 * f0 < nyquist)
                .map(|p| (2.0 * PI * p as f64 * f0 * t).sin() / p as f64)
                .sum();
            tone * (-decay_rate * t).exp()
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}
