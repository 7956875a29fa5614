#![no_main]

use amt_core::evalx::{parse_note_table, TruthFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for format in [TruthFormat::Tsv, TruthFormat::MapsTxt] {
        if let Ok(events) = parse_note_table(text, format) {
            assert!(events.iter().all(|e| e.onset_s.is_finite() && e.offset_s > e.onset_s));
        }
    }
});
