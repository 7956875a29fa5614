//! Note-level scoring, ground-truth readers and inter-channel ratios.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::multichannel::SpectroTensor;
use crate::notes::{self, sort_events, NoteEvent};
use crate::{Error, Result};

pub const DEFAULT_ONSET_TOLERANCE_S: f64 = 0.15;
pub const MIREX_ONSET_TOLERANCE_S: f64 = 0.05;
pub const DEFAULT_RATIO_FLOOR: f64 = 1e-8;

/// Absorbs rounding in onset differences, so that a 0.1 s gap is within a
/// 0.1 s tolerance.
pub const ONSET_SLACK_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_db: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure,
            delta_db: None,
        }
    }

    pub fn with_delta_db(mut self, delta_db: f64) -> Self {
        self.delta_db = Some(delta_db);
        self
    }

    /// Mean precision, recall and F over several files; counts are summed.
    pub fn average(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::from_counts(0, 0, 0);
        }
        let n = items.len() as f64;
        Metrics {
            tp: items.iter().map(|m| m.tp).sum(),
            fp: items.iter().map(|m| m.fp).sum(),
            fn_: items.iter().map(|m| m.fn_).sum(),
            precision: items.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: items.iter().map(|m| m.recall).sum::<f64>() / n,
            f_measure: items.iter().map(|m| m.f_measure).sum::<f64>() / n,
            delta_db: items[0]
                .delta_db
                .filter(|d| items.iter().all(|m| m.delta_db == Some(*d))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Greedy one-to-one note matching on pitch and onset; offsets are ignored.
///
/// Truth events are visited by onset; each takes the earliest-onset
/// unmatched prediction of the same pitch within `onset_tol_s`.
pub fn score(predicted: &[NoteEvent], truth: &[NoteEvent], onset_tol_s: f64) -> Metrics {
    let tol = onset_tol_s.max(0.0);
    let mut pred: Vec<&NoteEvent> = predicted.iter().collect();
    pred.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.midi.cmp(&b.midi)));
    let mut gt: Vec<&NoteEvent> = truth.iter().collect();
    gt.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.midi.cmp(&b.midi)));
    let mut used = vec![false; pred.len()];
    let mut tp = 0;
    for t in gt {
        let hit = pred
            .iter()
            .enumerate()
            .find(|(i, p)| !used[*i] && p.midi == t.midi && (p.onset_s - t.onset_s).abs() <= tol + ONSET_SLACK_S);
        if let Some((i, _)) = hit {
            used[i] = true;
            tp += 1;
        }
    }
    Metrics::from_counts(tp, predicted.len() - tp, truth.len() - tp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthFormat {
    /// `onset<TAB>offset<TAB>midi` lines.
    Tsv,
    /// MAPS annotation text: header `OnsetTime OffsetTime MidiPitch`, then
    /// whitespace-separated rows.
    MapsTxt,
    Midi,
}

impl TruthFormat {
    /// By extension: `.mid`/`.midi`, `.txt` (MAPS) or anything else (TSV).
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("mid") | Some("midi") => TruthFormat::Midi,
            Some("txt") => TruthFormat::MapsTxt,
            _ => TruthFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub events: Vec<NoteEvent>,
    pub source_format: TruthFormat,
}

pub fn read_ground_truth(path: &Path, format: TruthFormat) -> Result<GroundTruth> {
    let events = match format {
        TruthFormat::Midi => notes::read_midi(path)?,
        TruthFormat::Tsv | TruthFormat::MapsTxt => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_note_table(&text, format)?
        }
    };
    Ok(GroundTruth {
        events,
        source_format: format,
    })
}

/// Parses TSV or MAPS text. Blank lines and `#` comments are skipped; in
/// MAPS text, so is the header. Every other line needs onset, offset and
/// MIDI pitch.
pub fn parse_note_table(text: &str, format: TruthFormat) -> Result<Vec<NoteEvent>> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if format == TruthFormat::MapsTxt && line.starts_with("OnsetTime") {
            continue;
        }
        let fields: Vec<&str> = match format {
            TruthFormat::Tsv => line.split('\t').map(str::trim).collect(),
            _ => line.split_whitespace().collect(),
        };
        if fields.len() < 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad {what} {s:?}")))
        };
        let onset = num(fields[0], "onset")?;
        let offset = num(fields[1], "offset")?;
        let pitch = fields[2]
            .parse::<i64>()
            .map_err(|_| Error::parse(lineno, format!("bad MIDI pitch {:?}", fields[2])))?;
        if !(21..=108).contains(&pitch) {
            return Err(Error::parse(lineno, format!("MIDI pitch {pitch} outside 21..=108")));
        }
        let ev = NoteEvent::new(pitch as u8, onset, offset).map_err(|e| Error::parse(lineno, e.to_string()))?;
        events.push(ev);
    }
    sort_events(&mut events);
    Ok(events)
}

/// `|M1(frame, f)| / max(|M2(frame, f)|, floor)` for every bin of a
/// two-channel tensor.
pub fn interchannel_ratio(t: &SpectroTensor, frame_index: usize, floor_eps: f64) -> Result<Array1<f64>> {
    let (_, n_frames, c) = t.dims();
    if c != 2 {
        return Err(Error::InvalidArgument(format!(
            "inter-channel ratio needs 2 channels, got {c}"
        )));
    }
    if frame_index >= n_frames {
        return Err(Error::InvalidArgument(format!(
            "frame {frame_index} out of range (0..{n_frames})"
        )));
    }
    if !(floor_eps > 0.0) {
        return Err(Error::InvalidArgument("floor must be positive".into()));
    }
    let m1 = t.channel(0);
    let m2 = t.channel(1);
    Ok(Array1::from_shape_fn(m1.nrows(), |f| {
        m1[[f, frame_index]].abs() / m2[[f, frame_index]].abs().max(floor_eps)
    }))
}
