//! Audio to activations to note events, for every factorization method.

use amt_core::dictionary::Codebook;
use amt_core::evalx::{score, Metrics};
use amt_core::multichannel::{
    flexible_parafac2, ntf, simultaneous_nmf, Coupling, NtfOptions, Parafac2Options, SpectroTensor,
};
use amt_core::nnfac::{hals_nmf, nnls_fixed_dictionary_run};
use amt_core::notes::{detect_notes, threshold_value, NoteEvent};
use amt_core::pitch::{label_templates, PitchConfig};
use amt_core::signal::{stft_channels, stft_magnitude, AudioClip, Spectrogram};
use ndarray::{Array2, ArrayView2, Axis};

use crate::config::{Method, RunConfig};
use crate::{CliError, CliResult};

/// Activations of one factorization with the pitch of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub method: Method,
    /// `R x T`.
    pub activations: Array2<f64>,
    pub labels: Vec<Option<u8>>,
    pub hop_seconds: f64,
    pub objective_trace: Vec<f64>,
}

impl Transcription {
    pub fn threshold(&self, delta_db: f64) -> CliResult<f64> {
        Ok(threshold_value(&self.activations.view(), delta_db)?)
    }

    pub fn events(&self, cfg: &RunConfig, delta_db: f64) -> CliResult<Vec<NoteEvent>> {
        Ok(detect_notes(
            &self.activations.view(),
            &self.labels,
            &cfg.detector(delta_db),
            self.hop_seconds,
        )?)
    }
}

/// Scores for one δ of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub delta_db: f64,
    pub metrics: Metrics,
}

/// Detects and scores notes at every δ of the configured grid.
pub fn sweep(tr: &Transcription, cfg: &RunConfig, truth: &[NoteEvent], tol_s: f64) -> CliResult<Vec<SweepRow>> {
    cfg.delta
        .values()
        .into_iter()
        .map(|d| {
            let pred = tr.events(cfg, d)?;
            Ok(SweepRow {
                delta_db: d,
                metrics: score(&pred, truth, tol_s).with_delta_db(d),
            })
        })
        .collect()
}

/// Highest F-measure; the lowest δ wins ties.
pub fn best_row(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter().copied().fold(None, |best: Option<SweepRow>, r| match best {
        Some(b) if b.metrics.f_measure >= r.metrics.f_measure => Some(b),
        _ => Some(r),
    })
}

fn label_columns(w: &ArrayView2<'_, f64>, spec: &Spectrogram) -> Vec<Option<u8>> {
    label_templates(w, spec.sample_rate, spec.frame_len, &PitchConfig::default())
}

fn check_finite(trace: &[f64], what: &str) -> CliResult<()> {
    if trace.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Divergence(format!("{what} produced a non-finite objective")))
    }
}

/// Per-channel dictionaries: a single codebook is shared by all channels.
fn per_channel(books: &[Codebook], channels: usize) -> CliResult<Vec<&Codebook>> {
    match books.len() {
        1 => Ok(vec![&books[0]; channels]),
        n if n == channels => {
            if books.iter().any(|b| b.labels() != books[0].labels()) {
                return Err(CliError::Config("per-channel codebooks must share their labels".into()));
            }
            Ok(books.iter().collect())
        }
        n => Err(CliError::Config(format!("{n} codebooks for {channels} channels"))),
    }
}

fn check_bins(books: &[Codebook], spec: &Spectrogram) -> CliResult<()> {
    match books.iter().find(|b| b.n_bins() != spec.n_bins()) {
        Some(b) => Err(CliError::Config(format!(
            "codebook has {} bins, the audio gives {} (check sample rate and frame length)",
            b.n_bins(),
            spec.n_bins()
        ))),
        None => Ok(()),
    }
}

/// Runs the configured factorization on `clip`. With codebooks the run is
/// semi-supervised and rows carry the codebook labels; without, rows are
/// labelled by f0 estimation of the learned templates.
pub fn transcribe(clip: &AudioClip, cfg: &RunConfig, books: &[Codebook]) -> CliResult<Transcription> {
    cfg.validate_rank_or_books(books)?;
    let mut clip = clip.clone();
    if let Some(t) = cfg.truncate_seconds {
        clip.truncate(t);
    }
    let (activations, labels, trace, hop) = if cfg.method.is_multichannel() {
        multichannel(&clip, cfg, books)?
    } else {
        let spec = stft_magnitude(&clip.mixdown(), clip.sample_rate(), &cfg.stft)?;
        check_bins(books, &spec)?;
        let x = spec.data.view();
        let (h, labels, trace) = match (cfg.method, books.first()) {
            (Method::SemiNmf, Some(book)) => {
                let res = nnls_fixed_dictionary_run(&x, &book.w().view(), &cfg.nmf_config(book.rank()))?;
                (res.h, book.labels().to_vec(), res.objective_trace)
            }
            (Method::SemiNmf, None) => return Err(CliError::Config("semi_nmf needs a codebook".into())),
            _ => {
                let res = hals_nmf(&x, &cfg.nmf_config(cfg.rank.unwrap_or(0)))?;
                let labels = label_columns(&res.w.view(), &spec);
                (res.h, labels, res.objective_trace)
            }
        };
        (h, labels, trace, spec.hop_seconds)
    };
    check_finite(&trace, cfg.method.name())?;
    Ok(Transcription {
        method: cfg.method,
        activations,
        labels,
        hop_seconds: hop,
        objective_trace: trace,
    })
}

type Factorized = (Array2<f64>, Vec<Option<u8>>, Vec<f64>, f64);

fn multichannel(clip: &AudioClip, cfg: &RunConfig, books: &[Codebook]) -> CliResult<Factorized> {
    let specs = stft_channels(clip, &cfg.stft)?;
    let first = &specs[0];
    check_bins(books, first)?;
    let c = specs.len();
    let semi = !books.is_empty();
    let rank = if semi { books[0].rank() } else { cfg.rank.unwrap_or(0) };
    let nmf = cfg.nmf_config(rank);
    let hop = first.hop_seconds;
    match cfg.method {
        Method::SimulNmf => {
            let views: Vec<_> = specs.iter().map(|s| s.data.view()).collect();
            let stacked = if semi {
                let blocks: Vec<_> = per_channel(books, c)?.iter().map(|b| b.w().view()).collect();
                Some(ndarray::concatenate(Axis(0), &blocks).map_err(|e| CliError::Config(e.to_string()))?)
            } else {
                None
            };
            let res = simultaneous_nmf(&views, &nmf, true, stacked.as_ref().map(|w| w.view()).as_ref())?;
            let labels = if semi {
                books[0].labels().to_vec()
            } else {
                let summed = res
                    .w_blocks
                    .iter()
                    .fold(Array2::zeros(res.w_blocks[0].dim()), |acc, b| acc + b);
                label_columns(&summed.view(), first)
            };
            Ok((res.h, labels, res.objective_trace, hop))
        }
        Method::Ntf => {
            let t = SpectroTensor::from_spectrograms(&specs)?;
            let opts = NtfOptions {
                fixed_w: semi.then(|| mean_codebook(&per_channel(books, c)?)).transpose()?,
                ..Default::default()
            };
            let res = ntf(&t, &nmf, &opts)?;
            let labels = if semi {
                books[0].labels().to_vec()
            } else {
                label_columns(&res.w.view(), first)
            };
            Ok((res.h.t().to_owned(), labels, res.objective_trace, hop))
        }
        Method::Parafac2 => {
            let t = SpectroTensor::from_spectrograms(&specs)?;
            let opts = Parafac2Options {
                initial_w: if semi {
                    Some(per_channel(books, c)?.iter().map(|b| b.w().clone()).collect())
                } else {
                    None
                },
            };
            let res = flexible_parafac2(&t, &nmf, &Coupling::default(), &opts)?;
            let labels = if semi {
                books[0].labels().to_vec()
            } else {
                label_columns(&res.scaled_templates(0).view(), first)
            };
            Ok((res.h, labels, res.penalized_objective_trace, hop))
        }
        Method::BlindNmf | Method::SemiNmf => unreachable!("single-channel methods"),
    }
}

fn mean_codebook(books: &[&Codebook]) -> CliResult<Array2<f64>> {
    let sum = books
        .iter()
        .fold(Array2::zeros(books[0].w().dim()), |acc, b| acc + b.w());
    Ok(sum / books.len() as f64)
}

impl RunConfig {
    fn validate_rank_or_books(&self, books: &[Codebook]) -> CliResult<()> {
        if self.method == Method::SemiNmf && books.is_empty() {
            return Err(CliError::Config("semi_nmf needs a codebook".into()));
        }
        if books.is_empty() && self.rank.is_none() {
            return Err(CliError::Config(format!("blind {} needs --rank", self.method)));
        }
        self.stft.validate()?;
        Ok(())
    }
}
