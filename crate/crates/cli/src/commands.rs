//! Subcommand implementations. Each returns a summary and writes its
//! artifacts to disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use amt_core::dictionary::{build_channel_codebooks, build_codebook_from_clips, Codebook};
use amt_core::evalx::{interchannel_ratio, read_ground_truth, score, Metrics, TruthFormat, DEFAULT_RATIO_FLOOR};
use amt_core::multichannel::SpectroTensor;
use amt_core::notes::{write_events_tsv, write_midi, NoteEvent};
use amt_core::signal::{load_wav, stft_channels, write_wav, AudioClip, StftConfig};
use serde::Serialize;

use crate::config::{sparsity_label, RunConfig};
use crate::pipeline::{best_row, sweep, transcribe, SweepRow, Transcription};
use crate::synth::{parse_score, render_isolated_notes, render_score, StereoModel, SynthParams};
use crate::{CliError, CliResult};

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn list_dir(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// `out.ext` becomes `out.suffix`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

// ---------------------------------------------------------------------------
// learn-dict

/// MIDI pitch from a file name: a `M<n>` token (MAPS naming) or else the last
/// all-digit token, e.g. `note_60.wav`.
pub fn midi_from_file_name(path: &Path) -> Option<u8> {
    let stem = path.file_stem()?.to_str()?;
    let tokens: Vec<&str> = stem.split(['_', '-', '.', ' ']).collect();
    let maps = tokens.iter().find_map(|t| {
        t.strip_prefix('M')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
    });
    let digits = maps.or_else(|| {
        tokens
            .iter()
            .rev()
            .copied()
            .find(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()))
    })?;
    digits.parse().ok()
}

/// `file<TAB>midi` lines, file names relative to `dir`.
fn read_annotations(path: &Path, dir: &Path) -> CliResult<Vec<(PathBuf, u8)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, midi) = line
            .rsplit_once(['\t', ' ', ','])
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected 'file<TAB>midi'", path.display(), i + 1)))?;
        let midi = midi
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{}:{}: bad MIDI pitch {midi:?}", path.display(), i + 1)))?;
        out.push((dir.join(file.trim()), midi));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnSummary {
    pub columns: usize,
    pub bins: usize,
    pub lowest: u8,
    pub highest: u8,
    pub files: Vec<PathBuf>,
}

/// Learns a codebook from the WAV files of `note_dir`. With `per_channel`,
/// one extra codebook per channel is written as `<out>.ch<k>.csv`.
pub fn learn_dict(
    note_dir: &Path,
    annotations: Option<&Path>,
    out: &Path,
    stft: &StftConfig,
    per_channel: bool,
) -> CliResult<LearnSummary> {
    let pairs = match annotations {
        Some(a) => read_annotations(a, note_dir)?,
        None => list_dir(note_dir)?
            .into_iter()
            .filter(|p| has_ext(p, &["wav"]))
            .map(|p| {
                midi_from_file_name(&p)
                    .map(|m| (p.clone(), m))
                    .ok_or_else(|| CliError::Config(format!("no MIDI pitch in file name {}", p.display())))
            })
            .collect::<CliResult<_>>()?,
    };
    if pairs.is_empty() {
        return Err(CliError::Config(format!(
            "no annotated note files in {}",
            note_dir.display()
        )));
    }
    let clips = pairs
        .iter()
        .map(|(p, m)| Ok((load_wav(p)?, *m)))
        .collect::<CliResult<Vec<(AudioClip, u8)>>>()?;
    let mut book = build_codebook_from_clips(&clips, stft)?;
    book.source = format!("{} isolated-note files in {}", pairs.len(), note_dir.display());
    book.write(out)?;
    if per_channel {
        for (k, b) in build_channel_codebooks(&clips, stft)?.iter().enumerate() {
            b.write(&channel_codebook_path(out, k))?;
        }
    }
    let labels: Vec<u8> = book.labels().iter().flatten().copied().collect();
    Ok(LearnSummary {
        columns: book.rank(),
        bins: book.n_bins(),
        lowest: labels.iter().copied().min().unwrap_or(0),
        highest: labels.iter().copied().max().unwrap_or(0),
        files: pairs.into_iter().map(|(p, _)| p).collect(),
    })
}

pub fn channel_codebook_path(out: &Path, k: usize) -> PathBuf {
    sibling(out, &format!("ch{k}.csv"))
}

pub fn load_codebooks(paths: &[PathBuf]) -> CliResult<Vec<Codebook>> {
    paths.iter().map(|p| Ok(Codebook::read(p)?)).collect()
}

// ---------------------------------------------------------------------------
// transcribe

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscribeReport {
    pub method: String,
    pub sparsity: String,
    pub delta_db: f64,
    pub threshold: f64,
    pub events: usize,
    pub objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

/// Transcribes `audio` into `out_midi`, plus `<out>.tsv` (events) and
/// `<out>.json` (run log). A δ sweep needs ground truth to pick the best δ
/// and also writes `<out>.sweep.csv`.
pub fn transcribe_file(
    audio: &Path,
    cfg: &RunConfig,
    out_midi: &Path,
    truth: Option<&Path>,
    tol_s: f64,
) -> CliResult<TranscribeReport> {
    cfg.validate()?;
    let clip = load_wav(audio)?;
    let books = load_codebooks(&cfg.codebooks)?;
    let tr = transcribe(&clip, cfg, &books)?;
    let truth = truth
        .map(|p| read_ground_truth(p, TruthFormat::from_path(p)).map(|g| g.events))
        .transpose()?;
    let (delta, metrics) = match (&truth, cfg.delta.is_sweep()) {
        (Some(t), true) => {
            let rows = sweep(&tr, cfg, t, tol_s)?;
            write_text(&sibling(out_midi, "sweep.csv"), &sweep_csv(cfg, &rows))?;
            let best = best_row(&rows).expect("nonempty grid");
            (best.delta_db, Some(best.metrics))
        }
        (None, true) => return Err(CliError::Config("a delta sweep needs --truth to choose delta".into())),
        (t, false) => {
            let d = cfg.delta.values()[0];
            (
                d,
                t.as_ref()
                    .map(|t| Ok::<_, CliError>(score(&tr.events(cfg, d)?, t, tol_s).with_delta_db(d)))
                    .transpose()?,
            )
        }
    };
    let events = tr.events(cfg, delta)?;
    write_midi(&events, out_midi)?;
    write_events_tsv(&events, &sibling(out_midi, "tsv"))?;
    let report = TranscribeReport {
        method: cfg.method.name().into(),
        sparsity: sparsity_label(cfg.sparsity),
        delta_db: delta,
        threshold: tr.threshold(delta)?,
        events: events.len(),
        objective_trace: tr.objective_trace.clone(),
        metrics,
    };
    write_text(
        &sibling(out_midi, "json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

pub const TABLE_HEADER: &str = "method,sparsity,delta_db,precision,recall,f_measure";

fn table_row(method: &str, sparsity: &str, m: &Metrics) -> String {
    format!(
        "{method},{sparsity},{},{:.4},{:.4},{:.4}",
        m.delta_db.map_or_else(String::new, |d| d.to_string()),
        m.precision,
        m.recall,
        m.f_measure
    )
}

/// One row per δ, laid out like the comparison table.
pub fn sweep_csv(cfg: &RunConfig, rows: &[SweepRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    let sp = sparsity_label(cfg.sparsity);
    for r in rows {
        let _ = writeln!(s, "{}", table_row(cfg.method.name(), &sp, &r.metrics));
    }
    s
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub files: Vec<FileMetrics>,
    pub average: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileMetrics {
    pub name: String,
    pub metrics: Metrics,
}

const NOTE_EXTS: [&str; 5] = ["mid", "midi", "tsv", "txt", "csv"];

fn note_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| has_ext(p, &NOTE_EXTS))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p.clone())))
        .collect())
}

fn read_notes(path: &Path) -> CliResult<Vec<NoteEvent>> {
    Ok(read_ground_truth(path, TruthFormat::from_path(path))?.events)
}

/// Scores predictions against ground truth: two files, or two directories
/// paired by file stem. Writes JSON (`.json`) or CSV (anything else).
pub fn evaluate(pred: &Path, truth: &Path, tol_s: f64, out: Option<&Path>) -> CliResult<EvaluationReport> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if pred.is_dir() && truth.is_dir() {
        let p = note_files(pred)?;
        let t = note_files(truth)?;
        if let Some(k) = p
            .keys()
            .find(|k| !t.contains_key(*k))
            .or_else(|| t.keys().find(|k| !p.contains_key(*k)))
        {
            return Err(CliError::Config(format!(
                "{k} has no counterpart in the other directory"
            )));
        }
        p.into_iter().map(|(k, pp)| (k.clone(), pp, t[&k].clone())).collect()
    } else if pred.is_file() && truth.is_file() {
        let name = pred
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("prediction")
            .to_string();
        vec![(name, pred.to_path_buf(), truth.to_path_buf())]
    } else {
        return Err(CliError::Config(
            "prediction and truth must both be files or both directories".into(),
        ));
    };
    if pairs.is_empty() {
        return Err(CliError::Config("no note files to evaluate".into()));
    }
    let files = pairs
        .iter()
        .map(|(name, p, t)| {
            Ok(FileMetrics {
                name: name.clone(),
                metrics: score(&read_notes(p)?, &read_notes(t)?, tol_s),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = EvaluationReport {
        average: Metrics::average(&files.iter().map(|f| f.metrics).collect::<Vec<_>>()),
        files,
    };
    if let Some(out) = out {
        let text = if has_ext(out, &["json"]) {
            serde_json::to_string_pretty(&report).expect("report serializes")
        } else {
            let mut s = String::from("file,tp,fp,fn,precision,recall,f_measure\n");
            for f in report
                .files
                .iter()
                .map(|f| (f.name.as_str(), &f.metrics))
                .chain([("average", &report.average)])
            {
                let m = f.1;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:.4},{:.4},{:.4}",
                    f.0, m.tp, m.fp, m.fn_, m.precision, m.recall, m.f_measure
                );
            }
            s
        };
        write_text(out, &text)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// analyze-stereo

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    pub frame: usize,
    /// Median ratio over bins holding at least 1e-3 of the frame's peak energy.
    pub median: f64,
    /// Highest over lowest ratio on those bins; 1 for proportional channels.
    pub spread: f64,
}

/// Inter-channel ratio curves at the given frames: CSV with a frequency
/// column and one ratio column per frame.
pub fn analyze_stereo(audio: &Path, frames: &[usize], stft: &StftConfig, out: &Path) -> CliResult<Vec<RatioSummary>> {
    let clip = load_wav(audio)?;
    if clip.num_channels() != 2 {
        return Err(CliError::Config(format!(
            "stereo analysis needs 2 channels, got {}",
            clip.num_channels()
        )));
    }
    let specs = stft_channels(&clip, stft)?;
    let res = specs[0].freq_resolution_hz;
    let t = SpectroTensor::from_spectrograms(&specs)?;
    let curves = frames
        .iter()
        .map(|&f| Ok(interchannel_ratio(&t, f, DEFAULT_RATIO_FLOOR)?))
        .collect::<CliResult<Vec<_>>>()?;
    let mut csv = String::from("frequency_hz");
    for f in frames {
        let _ = write!(csv, ",frame_{f}");
    }
    csv.push('\n');
    for bin in 0..t.dims().0 {
        let _ = write!(csv, "{}", bin as f64 * res);
        for c in &curves {
            let _ = write!(csv, ",{}", c[bin]);
        }
        csv.push('\n');
    }
    write_text(out, &csv)?;
    Ok(frames
        .iter()
        .zip(&curves)
        .map(|(&frame, curve)| {
            let energy = t.channel(0).column(frame).to_owned() + t.channel(1).column(frame);
            let peak = energy.iter().fold(0.0f64, |m, &v| m.max(v));
            let mut vals: Vec<f64> = (0..curve.len())
                .filter(|&b| peak > 0.0 && energy[b] >= 1e-3 * peak)
                .map(|b| curve[b])
                .collect();
            vals.sort_by(f64::total_cmp);
            let median = vals.get(vals.len() / 2).copied().unwrap_or(0.0);
            let spread = match (vals.first(), vals.last()) {
                (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
                _ => f64::INFINITY,
            };
            RatioSummary { frame, median, spread }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// synth

/// Renders a score TSV to `out_wav` and writes the exact ground truth to
/// `<out>.tsv`.
pub fn synth(score_path: &Path, out_wav: &Path, model: StereoModel, params: &SynthParams) -> CliResult<Vec<NoteEvent>> {
    let events = parse_score(&read_text(score_path)?)?;
    let clip = render_score(&events, model, params)?;
    write_wav(out_wav, &clip)?;
    write_events_tsv(&events, &sibling(out_wav, "tsv"))?;
    Ok(events)
}

/// Writes one isolated-note WAV per pitch (`note_<midi>.wav`) and an
/// `annotations.tsv` for `learn-dict`.
pub fn synth_notes(
    midis: &[u8],
    duration_s: f64,
    out_dir: &Path,
    model: StereoModel,
    params: &SynthParams,
) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut annotations = String::new();
    let mut paths = Vec::new();
    for (clip, m) in render_isolated_notes(midis, duration_s, model, params)? {
        let name = format!("note_{m}.wav");
        let path = out_dir.join(&name);
        write_wav(&path, &clip)?;
        let _ = writeln!(annotations, "{name}\t{m}");
        paths.push(path);
    }
    write_text(&out_dir.join("annotations.tsv"), &annotations)?;
    Ok(paths)
}

// ---------------------------------------------------------------------------
// comparison table

/// One configuration of the comparison grid with its best δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub method: String,
    pub sparsity: String,
    pub best: Metrics,
    /// Metrics averaged over files at every δ of the grid.
    pub sweep: Vec<Metrics>,
}

/// Sweeps δ for every configuration over `(audio, truth)` pairs. Metrics at
/// each δ are averaged over files; the row keeps the δ with the best mean F.
pub fn comparison_table(
    items: &[(AudioClip, Vec<NoteEvent>)],
    configs: &[RunConfig],
    books: &[Codebook],
    tol_s: f64,
) -> CliResult<Vec<TableRow>> {
    configs
        .iter()
        .map(|cfg| {
            // files are independent; results are joined in input order
            let per_file = std::thread::scope(|scope| {
                let handles: Vec<_> = items
                    .iter()
                    .map(|(clip, truth)| {
                        scope.spawn(move || {
                            let tr: Transcription = transcribe(clip, cfg, books)?;
                            sweep(&tr, cfg, truth, tol_s)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("transcription thread panicked"))
                    .collect::<CliResult<Vec<_>>>()
            })?;
            let grid = cfg.delta.values();
            let averaged: Vec<SweepRow> = grid
                .iter()
                .enumerate()
                .map(|(i, &d)| SweepRow {
                    delta_db: d,
                    metrics: Metrics::average(&per_file.iter().map(|rows| rows[i].metrics).collect::<Vec<_>>())
                        .with_delta_db(d),
                })
                .collect();
            let best = best_row(&averaged).expect("nonempty grid");
            Ok(TableRow {
                method: cfg.method.name().into(),
                sparsity: sparsity_label(cfg.sparsity),
                best: best.metrics,
                sweep: averaged.iter().map(|r| r.metrics).collect(),
            })
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", table_row(&r.method, &r.sparsity, &r.best));
    }
    s
}

/// MAPS-style folder: every `.wav` with a sibling `.txt` annotation,
/// searched recursively.
pub fn maps_pieces(dir: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = entry.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if has_ext(&p, &["wav"]) {
                let txt = p.with_extension("txt");
                if txt.is_file() {
                    out.push((p, txt));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Runs the comparison table on a MAPS folder, truncating each piece to its
/// first `truncate_s` seconds.
pub fn reproduce_maps(
    dir: &Path,
    configs: &[RunConfig],
    books: &[Codebook],
    truncate_s: f64,
    tol_s: f64,
    out: &Path,
) -> CliResult<Vec<TableRow>> {
    let pieces = maps_pieces(dir)?;
    if pieces.is_empty() {
        return Err(CliError::Config(format!("no .wav/.txt pairs under {}", dir.display())));
    }
    let items = pieces
        .iter()
        .map(|(wav, txt)| {
            let mut clip = load_wav(wav)?;
            clip.truncate(truncate_s);
            let truth = read_notes(txt)?
                .into_iter()
                .filter(|e| e.onset_s < truncate_s)
                .collect();
            Ok((clip, truth))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows = comparison_table(&items, configs, books, tol_s)?;
    write_text(out, &table_csv(&rows))?;
    Ok(rows)
}
