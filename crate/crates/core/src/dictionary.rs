//! Note codebooks: one rank-1 NMF template per isolated-note recording,
//! labelled with its MIDI pitch.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::nnfac::{hals_nmf, NmfConfig, RhoMode};
use crate::notes::PIANO_RANGE;
use crate::signal::{self, AudioClip, Spectrogram, StftConfig};
use crate::{Error, Result};

/// Fixed dictionary `W` (`F x R`) with one optional MIDI label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    w: Array2<f64>,
    labels: Vec<Option<u8>>,
    pub source: String,
}

impl Codebook {
    /// Normalizes every nonzero column to unit ℓ2 norm. Labels must be in the
    /// piano range and distinct.
    pub fn new(mut w: Array2<f64>, labels: Vec<Option<u8>>, source: impl Into<String>) -> Result<Self> {
        if labels.len() != w.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "codebook entries must be finite and nonnegative".into(),
            ));
        }
        check_labels(labels.iter().flatten().copied())?;
        for mut col in w.columns_mut() {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                col.mapv_inplace(|v| v / n);
            }
        }
        Ok(Self {
            w,
            labels,
            source: source.into(),
        })
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn n_bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// Indices of all-zero columns.
    pub fn zero_columns(&self) -> Vec<usize> {
        self.w
            .columns()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// CSV text: header `midi_labels: 21,22,-,...` (`-` = unlabelled), then
    /// one line per frequency bin.
    pub fn to_csv(&self) -> String {
        let labels: Vec<String> = self
            .labels
            .iter()
            .map(|l| l.map_or_else(|| "-".to_string(), |m| m.to_string()))
            .collect();
        format!(
            "midi_labels: {}\n{}",
            labels.join(","),
            crate::csv::matrix_to_string(&self.w)
        )
    }

    pub fn from_csv(text: &str, source: impl Into<String>) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let list = header
            .trim()
            .strip_prefix("midi_labels:")
            .ok_or_else(|| Error::parse(1, "expected a 'midi_labels:' header"))?;
        let labels = list
            .split(',')
            .map(|s| match s.trim() {
                "-" => Ok(None),
                t => t
                    .parse::<u8>()
                    .map(Some)
                    .map_err(|_| Error::parse(1, format!("bad label {t:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let w = crate::csv::parse_matrix(body, 2)?;
        Self::new(w, labels, source)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path.display().to_string())
    }
}

fn check_labels(labels: impl Iterator<Item = u8>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in labels {
        if !PIANO_RANGE.contains(&m) {
            return Err(Error::PitchOutOfRange(m as i64));
        }
        if !seen.insert(m) {
            return Err(Error::DuplicateLabel(m));
        }
    }
    Ok(())
}

/// Vertically stacks per-channel codebooks with identical labels into one
/// `(C·F) x R` dictionary, each block keeping its own normalization.
pub fn stack_codebooks(books: &[Codebook]) -> Result<(Array2<f64>, Vec<Option<u8>>)> {
    let first = books
        .first()
        .ok_or_else(|| Error::InvalidArgument("no codebooks to stack".into()))?;
    if books
        .iter()
        .any(|b| b.labels != first.labels || b.n_bins() != first.n_bins())
    {
        return Err(Error::ShapeMismatch("codebooks differ in labels or bins".into()));
    }
    let views: Vec<ArrayView2<'_, f64>> = books.iter().map(|b| b.w.view()).collect();
    let w = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((w, first.labels.clone()))
}

fn template_config() -> NmfConfig {
    NmfConfig {
        rho: RhoMode::OpCount,
        ..NmfConfig::new(1)
    }
}

/// ℓ2-normalized `W` factor of a rank-1 HALS NMF of the spectrogram.
pub fn learn_note_template(spec: &Spectrogram) -> Result<Array1<f64>> {
    learn_template_matrix(&spec.data.view())
}

fn learn_template_matrix(x: &ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty spectrogram".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("all-zero spectrogram".into()));
    }
    let res = hals_nmf(x, &template_config())?;
    let col = res.w.column(0).to_owned();
    let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("rank-1 factorization collapsed to zero".into()));
    }
    Ok(col / n)
}

/// Codebook from in-memory isolated-note clips. Multichannel clips are
/// averaged to mono first. Columns are sorted by label.
pub fn build_codebook_from_clips(notes: &[(AudioClip, u8)], stft: &StftConfig) -> Result<Codebook> {
    check_labels(notes.iter().map(|(_, m)| *m))?;
    let specs = notes
        .iter()
        .map(|(clip, m)| Ok((signal::stft_magnitude(&clip.mixdown(), clip.sample_rate(), stft)?, *m)))
        .collect::<Result<Vec<_>>>()?;
    assemble(specs, "clips")
}

/// Codebook from `(wav path, midi)` pairs.
pub fn build_codebook(note_files: &[(PathBuf, u8)], stft: &StftConfig) -> Result<Codebook> {
    check_labels(note_files.iter().map(|(_, m)| *m))?;
    let clips = note_files
        .iter()
        .map(|(p, m)| Ok((signal::load_wav(p)?, *m)))
        .collect::<Result<Vec<_>>>()?;
    let mut book = build_codebook_from_clips(&clips, stft)?;
    book.source = format!("{} isolated-note files", note_files.len());
    Ok(book)
}

/// One codebook per channel. All clips must have the same channel count.
pub fn build_channel_codebooks(notes: &[(AudioClip, u8)], stft: &StftConfig) -> Result<Vec<Codebook>> {
    check_labels(notes.iter().map(|(_, m)| *m))?;
    let channels = notes
        .first()
        .map(|(c, _)| c.num_channels())
        .ok_or_else(|| Error::InvalidArgument("no note clips".into()))?;
    if notes.iter().any(|(c, _)| c.num_channels() != channels) {
        return Err(Error::ShapeMismatch("note clips differ in channel count".into()));
    }
    (0..channels)
        .map(|ch| {
            let specs = notes
                .iter()
                .map(|(clip, m)| Ok((signal::stft_magnitude(clip.channel(ch), clip.sample_rate(), stft)?, *m)))
                .collect::<Result<Vec<_>>>()?;
            assemble(specs, &format!("channel {ch}"))
        })
        .collect()
}

fn assemble(mut specs: Vec<(Spectrogram, u8)>, source: &str) -> Result<Codebook> {
    let bins = specs
        .first()
        .map(|(s, _)| s.n_bins())
        .ok_or_else(|| Error::InvalidArgument("no note recordings".into()))?;
    if specs.iter().any(|(s, _)| s.n_bins() != bins) {
        return Err(Error::ShapeMismatch(
            "note spectrograms differ in frequency bins".into(),
        ));
    }
    specs.sort_by_key(|(_, m)| *m);
    let mut w = Array2::zeros((bins, specs.len()));
    for (j, (s, _)) in specs.iter().enumerate() {
        w.column_mut(j).assign(&learn_note_template(s)?);
    }
    let labels = specs.iter().map(|(_, m)| Some(*m)).collect();
    Codebook::new(w, labels, source)
}
