use std::path::PathBuf;

use amt_core::dictionary::{build_codebook, build_codebook_from_clips, learn_note_template, Codebook};
use amt_core::pitch::{estimate_f0, freq_to_midi, label_templates, PitchConfig};
use amt_core::signal::{stft_magnitude, synth_note, write_wav, AudioClip, StftConfig};
use amt_core::Error;

const SR: u32 = 22050;

fn note_clip(midi: u8, partials: usize) -> AudioClip {
    AudioClip::mono(synth_note(midi as i64, 0.5, SR, partials, 2.0).unwrap(), SR).unwrap()
}

#[test]
fn synth_templates_recover_their_pitch() {
    let cfg = StftConfig::default();
    let mut misses = Vec::new();
    for partials in [4, 6, 10] {
        for midi in 36u8..=96 {
            let clip = note_clip(midi, partials);
            let spec = stft_magnitude(clip.channel(0), SR, &cfg).unwrap();
            let t = learn_note_template(&spec).unwrap();
            let est = estimate_f0(&t.to_vec(), SR, spec.frame_len, &PitchConfig::default()).unwrap();
            if est.midi != midi as i64 || !est.is_note {
                misses.push((partials, midi, est.midi, est.salience));
            }
        }
    }
    assert!(misses.is_empty(), "{misses:?}");
}

#[test]
fn template_peaks_sit_on_partials() {
    let cfg = StftConfig::default();
    let spec = stft_magnitude(note_clip(69, 5).channel(0), SR, &cfg).unwrap();
    let t = learn_note_template(&spec).unwrap();
    assert!((t.dot(&t) - 1.0).abs() < 1e-12);
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[b].total_cmp(&t[a]));
    // the five strongest local maxima are the five partials
    let peaks: Vec<usize> = order
        .into_iter()
        .filter(|&k| k > 0 && k + 1 < t.len() && t[k] >= t[k - 1] && t[k] >= t[k + 1])
        .take(5)
        .collect();
    for p in 1..=5 {
        let want = 440.0 * p as f64 / spec.freq_resolution_hz;
        assert!(
            peaks.iter().any(|&k| (k as f64 - want).abs() <= 1.0),
            "partial {p}: {peaks:?}"
        );
    }
}

#[test]
fn codebook_is_sorted_normalized_and_order_insensitive() {
    let cfg = StftConfig::default();
    let notes: Vec<(AudioClip, u8)> = [64u8, 60, 72, 67].iter().map(|&m| (note_clip(m, 4), m)).collect();
    let book = build_codebook_from_clips(&notes, &cfg).unwrap();
    assert_eq!(book.labels(), &[Some(60), Some(64), Some(67), Some(72)]);
    for col in book.w().columns() {
        assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
    }
    let mut reversed = notes.clone();
    reversed.reverse();
    assert_eq!(build_codebook_from_clips(&reversed, &cfg).unwrap().w(), book.w());

    let labels = label_templates(&book.w().view(), SR, cfg.frame_len_samples(SR), &PitchConfig::default());
    assert_eq!(labels, book.labels());

    let mut dup = notes.clone();
    dup.push((note_clip(60, 4), 60));
    assert!(matches!(
        build_codebook_from_clips(&dup, &cfg),
        Err(Error::DuplicateLabel(60))
    ));
}

#[test]
fn full_piano_codebook_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StftConfig::default();
    let files: Vec<(PathBuf, u8)> = (21u8..=108)
        .map(|m| {
            let path = dir.path().join(format!("note_{m}.wav"));
            let clip = AudioClip::mono(synth_note(m as i64, 0.2, SR, 4, 2.0).unwrap(), SR).unwrap();
            write_wav(&path, &clip).unwrap();
            (path, m)
        })
        .collect();
    let book = build_codebook(&files, &cfg).unwrap();
    assert_eq!(book.rank(), 88);
    assert!(book.labels().windows(2).all(|p| p[0] < p[1]));
    let path = dir.path().join("book.csv");
    book.write(&path).unwrap();
    let back = Codebook::read(&path).unwrap();
    assert_eq!(back.labels(), book.labels());
    let err = (back.w() - book.w()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-15);
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .starts_with("midi_labels: 21,22,23,"));
}

#[test]
fn mismatched_frame_sizes_are_rejected() {
    let a = (note_clip(60, 4), 60);
    let b = (
        AudioClip::mono(synth_note(62, 0.5, 44100, 4, 2.0).unwrap(), 44100).unwrap(),
        62,
    );
    assert!(matches!(
        build_codebook_from_clips(&[a, b], &StftConfig::default()),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn freq_to_midi_covers_the_keyboard() {
    assert_eq!(freq_to_midi(27.5).unwrap(), 21);
    assert_eq!(freq_to_midi(440.0).unwrap(), 69);
    for n in -48i64..=39 {
        assert_eq!(freq_to_midi(440.0 * 2f64.powf(n as f64 / 12.0)).unwrap(), 69 + n);
    }
}
