//! Note events from activation matrices, and Standard MIDI File I/O.

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PIANO_RANGE: std::ops::RangeInclusive<u8> = 21..=108;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub midi: u8,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl NoteEvent {
    pub fn new(midi: u8, onset_s: f64, offset_s: f64) -> Result<Self> {
        if !PIANO_RANGE.contains(&midi) {
            return Err(Error::PitchOutOfRange(midi as i64));
        }
        if !(onset_s.is_finite() && offset_s.is_finite() && onset_s >= 0.0 && offset_s > onset_s) {
            return Err(Error::InvalidArgument(format!(
                "note interval [{onset_s}, {offset_s}] is not a positive span"
            )));
        }
        Ok(Self {
            midi,
            onset_s,
            offset_s,
        })
    }
}

/// Sorts by onset, then pitch, then offset.
pub fn sort_events(events: &mut [NoteEvent]) {
    events.sort_by(|a, b| {
        a.onset_s
            .total_cmp(&b.onset_s)
            .then(a.midi.cmp(&b.midi))
            .then(a.offset_s.total_cmp(&b.offset_s))
    });
}

// ---------------------------------------------------------------------------
// Detection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub mode: ThresholdMode,
    /// Threshold (or adaptive base) as a decibel reduction of `max(H)`.
    pub delta_db: f64,
    /// Frames averaged forward from the candidate frame in fixed mode.
    pub smooth_frames: usize,
    /// Half-width of the adaptive context window.
    pub context_halfwidth: usize,
    pub refine_fraction: f64,
    pub refine_lookback: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Fixed,
            delta_db: 17.5,
            smooth_frames: 5,
            context_halfwidth: 10,
            refine_fraction: 0.10,
            refine_lookback: 5,
        }
    }
}

impl DetectorConfig {
    pub fn with_delta_db(delta_db: f64) -> Self {
        Self {
            delta_db,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta_db > 0.0 && self.delta_db.is_finite()) {
            return Err(Error::InvalidArgument("delta_db must be positive".into()));
        }
        if self.smooth_frames == 0 || self.context_halfwidth == 0 || self.refine_lookback == 0 {
            return Err(Error::InvalidArgument("detector frame counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// `max(H) · 10^(−δ/10)`.
pub fn threshold_value(h: &ArrayView2<'_, f64>, delta_db: f64) -> Result<f64> {
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InvalidArgument("activations are all zero".into()));
    }
    Ok(max * 10f64.powf(-delta_db / 10.0))
}

/// A detected note in frame units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameEvent {
    pub row: usize,
    /// Refined onset frame.
    pub onset: usize,
    /// Frame at which the detector fired.
    pub detection: usize,
    /// First frame back below the threshold, or the frame count.
    pub offset: usize,
}

/// Runs the detector over every row of `h` (`R x T`).
///
/// A row fires at frame `t` when its activation exceeds the threshold and,
/// in fixed mode, so does its mean over frames `t..t+smooth_frames` (zero
/// beyond the end). In adaptive mode the threshold at `t` is the base plus
/// the zero-padded mean over `t−w..=t+w`. After firing, the row is silent
/// until the activation falls back below the threshold; that frame is the
/// offset. The onset is moved back to the earliest of the previous
/// `refine_lookback` frames whose activation exceeds `refine_fraction` times
/// the threshold, or by `refine_lookback` frames if there is none, and never
/// before the previous offset on the same row.
pub fn detect_frames(h: &ArrayView2<'_, f64>, cfg: &DetectorConfig) -> Result<Vec<FrameEvent>> {
    cfg.validate()?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let base = match threshold_value(h, cfg.delta_db) {
        Ok(t) => t,
        Err(_) => return Ok(Vec::new()),
    };
    let mut out = Vec::new();
    for (row_idx, row) in h.rows().into_iter().enumerate() {
        let act: Vec<f64> = row.to_vec();
        let thresh = row_thresholds(&act, base, cfg);
        let n = act.len();
        let mut t = 0;
        let mut floor = 0;
        while t < n {
            if !fires(&act, &thresh, t, cfg) {
                t += 1;
                continue;
            }
            let limit = cfg.refine_fraction * thresh[t];
            let lo = t.saturating_sub(cfg.refine_lookback).max(floor);
            let onset = (lo..t).find(|&j| act[j] > limit).unwrap_or(lo);
            let offset = (t + 1..n).find(|&u| act[u] < thresh[u]).unwrap_or(n);
            out.push(FrameEvent {
                row: row_idx,
                onset,
                detection: t,
                offset,
            });
            floor = offset;
            t = offset;
        }
    }
    Ok(out)
}

fn row_thresholds(act: &[f64], base: f64, cfg: &DetectorConfig) -> Vec<f64> {
    match cfg.mode {
        ThresholdMode::Fixed => vec![base; act.len()],
        ThresholdMode::Adaptive => {
            let w = cfg.context_halfwidth;
            let width = (2 * w + 1) as f64;
            (0..act.len())
                .map(|t| {
                    let lo = t.saturating_sub(w);
                    let hi = (t + w + 1).min(act.len());
                    base + act[lo..hi].iter().sum::<f64>() / width
                })
                .collect()
        }
    }
}

fn fires(act: &[f64], thresh: &[f64], t: usize, cfg: &DetectorConfig) -> bool {
    if act[t] <= thresh[t] {
        return false;
    }
    match cfg.mode {
        ThresholdMode::Adaptive => true,
        ThresholdMode::Fixed => {
            let hi = (t + cfg.smooth_frames).min(act.len());
            let mean = act[t..hi].iter().sum::<f64>() / cfg.smooth_frames as f64;
            mean > thresh[t]
        }
    }
}

/// Detects notes and converts them to timed events.
///
/// Rows labelled `None` are ignored. Overlapping events of the same pitch
/// coming from different rows are merged into one. The result is sorted by
/// onset, then pitch.
pub fn detect_notes(
    h: &ArrayView2<'_, f64>,
    row_labels: &[Option<u8>],
    cfg: &DetectorConfig,
    hop_seconds: f64,
) -> Result<Vec<NoteEvent>> {
    if row_labels.len() != h.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} row labels for {} activation rows",
            row_labels.len(),
            h.nrows()
        )));
    }
    if !(hop_seconds > 0.0) {
        return Err(Error::InvalidArgument("hop must be positive".into()));
    }
    let frames = detect_frames(h, cfg)?;
    let mut by_pitch: Vec<(u8, usize, usize)> = frames
        .iter()
        .filter_map(|e| row_labels[e.row].map(|m| (m, e.onset, e.offset)))
        .filter(|(m, _, _)| PIANO_RANGE.contains(m))
        .collect();
    by_pitch.sort();
    let mut merged: Vec<(u8, usize, usize)> = Vec::with_capacity(by_pitch.len());
    for (m, on, off) in by_pitch {
        match merged.last_mut() {
            Some(last) if last.0 == m && on < last.2 => last.2 = last.2.max(off),
            _ => merged.push((m, on, off)),
        }
    }
    let mut events: Vec<NoteEvent> = merged
        .into_iter()
        .map(|(m, on, off)| NoteEvent {
            midi: m,
            onset_s: on as f64 * hop_seconds,
            offset_s: off as f64 * hop_seconds,
        })
        .collect();
    sort_events(&mut events);
    Ok(events)
}

// ---------------------------------------------------------------------------
// Standard MIDI Files

pub const TICKS_PER_QUARTER: u16 = 480;
pub const TEMPO_US_PER_QUARTER: u32 = 500_000;
pub const NOTE_VELOCITY: u8 = 64;

/// Ticks per second at the fixed tempo and division.
pub const TICKS_PER_SECOND: f64 = TICKS_PER_QUARTER as f64 * 1e6 / TEMPO_US_PER_QUARTER as f64;

pub fn seconds_to_ticks(s: f64) -> u32 {
    (s * TICKS_PER_SECOND).round().max(0.0) as u32
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut stack = [0u8; 5];
    let mut n = 0;
    loop {
        stack[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { stack[i] | 0x80 } else { stack[i] });
    }
}

/// Largest tick a file written here may hold: every delta then fits the
/// 4-byte variable-length limit. About 77 hours at the fixed tempo.
pub const MAX_TICK: u32 = 0x0FFF_FFFF;

/// Encodes events as a format-0 SMF: division 480, tempo 120 BPM, channel 0,
/// note-on velocity 64, note-off (0x80) velocity 0. At equal ticks note-offs
/// precede note-ons. No running status.
pub fn encode_midi(events: &[NoteEvent]) -> Result<Vec<u8>> {
    if let Some(e) = events.iter().find(|e| e.offset_s * TICKS_PER_SECOND > MAX_TICK as f64) {
        return Err(Error::InvalidArgument(format!(
            "note ending at {} s is beyond the last representable tick",
            e.offset_s
        )));
    }
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    // (tick, 0 = off / 1 = on, pitch)
    let mut msgs: Vec<(u32, u8, u8)> = Vec::with_capacity(sorted.len() * 2);
    for e in &sorted {
        msgs.push((seconds_to_ticks(e.onset_s), 1, e.midi));
        msgs.push((seconds_to_ticks(e.offset_s), 0, e.midi));
    }
    msgs.sort_by_key(|&(tick, kind, pitch)| (tick, kind, pitch));

    let mut track = Vec::new();
    track.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    track.extend_from_slice(&TEMPO_US_PER_QUARTER.to_be_bytes()[1..]);
    let mut now = 0;
    for (tick, kind, pitch) in msgs {
        push_vlq(&mut track, tick - now);
        now = tick;
        if kind == 1 {
            track.extend_from_slice(&[0x90, pitch, NOTE_VELOCITY]);
        } else {
            track.extend_from_slice(&[0x80, pitch, 0]);
        }
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

pub fn write_midi(events: &[NoteEvent], path: &Path) -> Result<()> {
    std::fs::write(path, encode_midi(events)?).map_err(|e| Error::io(path, e))
}

pub fn read_midi(path: &Path) -> Result<Vec<NoteEvent>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_midi(&bytes)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::Midi(format!("unexpected end of data at byte {}", self.pos)))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Midi(format!(
                "need {n} bytes at offset {}, only {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Midi("variable-length quantity longer than 4 bytes".into()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Raw {
    On { chan: u8, key: u8 },
    Off { chan: u8, key: u8 },
    Tempo(u32),
    End,
}

/// Decodes note events from an SMF (formats 0 and 1, metrical division).
///
/// Tempo changes in any track apply to all tracks. Note-on with velocity 0
/// counts as note-off; overlapping notes of one key on one channel are
/// paired first-in first-out; notes still sounding at the end of their track
/// close there. Zero-length notes and keys outside the piano range are
/// dropped.
pub fn decode_midi(bytes: &[u8]) -> Result<Vec<NoteEvent>> {
    let mut rd = Reader::new(bytes);
    if rd.take(4)? != b"MThd" {
        return Err(Error::Midi("missing MThd header".into()));
    }
    let hlen = rd.u32()? as usize;
    if hlen < 6 {
        return Err(Error::Midi(format!("header length {hlen} < 6")));
    }
    let format = rd.u16()?;
    let ntracks = rd.u16()?;
    let division = rd.u16()?;
    rd.take(hlen - 6)?;
    if format > 2 {
        return Err(Error::Midi(format!("unknown format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(Error::Midi("SMPTE time division is not supported".into()));
    }
    if division == 0 {
        return Err(Error::Midi("zero ticks per quarter note".into()));
    }

    let mut tracks: Vec<Vec<(u64, Raw)>> = Vec::new();
    while rd.remaining() >= 8 && tracks.len() < ntracks as usize {
        let id = rd.take(4)?;
        let len = rd.u32()? as usize;
        let body = rd.take(len)?;
        if id == b"MTrk" {
            tracks.push(parse_track(body)?);
        }
    }
    if tracks.len() < ntracks as usize {
        return Err(Error::Midi(format!(
            "header announces {ntracks} tracks, found {}",
            tracks.len()
        )));
    }

    let mut tempo_map: Vec<(u64, u32)> = tracks
        .iter()
        .flatten()
        .filter_map(|&(tick, ev)| match ev {
            Raw::Tempo(t) => Some((tick, t)),
            _ => None,
        })
        .collect();
    tempo_map.sort_by_key(|&(tick, _)| tick);
    let clock = TempoClock::new(&tempo_map, division);

    let mut events = Vec::new();
    for track in &tracks {
        let mut open: std::collections::HashMap<(u8, u8), std::collections::VecDeque<u64>> = Default::default();
        let mut last_tick = 0;
        for &(tick, ev) in track {
            last_tick = tick;
            match ev {
                Raw::On { chan, key } => open.entry((chan, key)).or_default().push_back(tick),
                Raw::Off { chan, key } => {
                    if let Some(start) = open.get_mut(&(chan, key)).and_then(|q| q.pop_front()) {
                        push_note(&mut events, &clock, key, start, tick);
                    }
                }
                Raw::Tempo(_) | Raw::End => {}
            }
        }
        let mut dangling: Vec<((u8, u8), u64)> = open
            .into_iter()
            .flat_map(|(k, q)| q.into_iter().map(move |s| (k, s)))
            .collect();
        dangling.sort();
        for ((_, key), start) in dangling {
            push_note(&mut events, &clock, key, start, last_tick);
        }
    }
    sort_events(&mut events);
    Ok(events)
}

fn push_note(out: &mut Vec<NoteEvent>, clock: &TempoClock, key: u8, start: u64, end: u64) {
    if end <= start || !PIANO_RANGE.contains(&key) {
        return;
    }
    out.push(NoteEvent {
        midi: key,
        onset_s: clock.seconds(start),
        offset_s: clock.seconds(end),
    });
}

fn parse_track(body: &[u8]) -> Result<Vec<(u64, Raw)>> {
    let mut rd = Reader::new(body);
    let mut out = Vec::new();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while rd.remaining() > 0 {
        tick += rd.vlq()? as u64;
        let first = rd.u8()?;
        let (status, data0) = if first & 0x80 != 0 {
            (first, None)
        } else {
            let s = running.ok_or_else(|| Error::Midi("data byte without running status".into()))?;
            (s, Some(first))
        };
        match status {
            0xFF => {
                running = None;
                let kind = rd.u8()?;
                let len = rd.vlq()? as usize;
                let data = rd.take(len)?;
                match kind {
                    0x51 if len == 3 => {
                        let t = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if t > 0 {
                            out.push((tick, Raw::Tempo(t)));
                        }
                    }
                    0x2F => {
                        out.push((tick, Raw::End));
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = rd.vlq()? as usize;
                rd.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let chan = status & 0x0f;
                let a = match data0 {
                    Some(b) => b,
                    None => rd.u8()?,
                };
                let kind = status & 0xf0;
                if kind == 0xC0 || kind == 0xD0 {
                    continue;
                }
                let b = rd.u8()?;
                if a > 0x7f || b > 0x7f {
                    return Err(Error::Midi("data byte with high bit set".into()));
                }
                match kind {
                    0x90 if b > 0 => out.push((tick, Raw::On { chan, key: a })),
                    0x90 | 0x80 => out.push((tick, Raw::Off { chan, key: a })),
                    _ => {}
                }
            }
            other => return Err(Error::Midi(format!("unexpected status byte {other:#04x}"))),
        }
    }
    Ok(out)
}

/// Tick to seconds under a piecewise-constant tempo.
struct TempoClock {
    /// (tick, seconds at tick, µs per quarter from tick on)
    segments: Vec<(u64, f64, u32)>,
    division: f64,
}

impl TempoClock {
    fn new(changes: &[(u64, u32)], division: u16) -> Self {
        let division = division as f64;
        let mut segments = vec![(0u64, 0.0f64, TEMPO_US_PER_QUARTER)];
        for &(tick, tempo) in changes {
            let &(t0, s0, q0) = segments.last().expect("nonempty");
            let s = s0 + (tick - t0) as f64 * q0 as f64 / 1e6 / division;
            if tick == t0 {
                segments.last_mut().expect("nonempty").2 = tempo;
            } else {
                segments.push((tick, s, tempo));
            }
        }
        Self { segments, division }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let idx = self.segments.partition_point(|&(t, _, _)| t <= tick) - 1;
        let (t0, s0, q) = self.segments[idx];
        s0 + (tick - t0) as f64 * q as f64 / 1e6 / self.division
    }
}

/// Events as TSV lines `onset_s<TAB>offset_s<TAB>midi`.
pub fn events_to_tsv(events: &[NoteEvent]) -> String {
    events
        .iter()
        .map(|e| format!("{:.6}\t{:.6}\t{}\n", e.onset_s, e.offset_s, e.midi))
        .collect()
}

pub fn write_events_tsv(events: &[NoteEvent], path: &Path) -> Result<()> {
    std::fs::write(path, events_to_tsv(events)).map_err(|e| Error::io(path, e))
}
