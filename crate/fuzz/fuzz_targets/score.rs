#![no_main]

use amt_cli::synth::parse_score;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = parse_score(text) {
        assert!(events.iter().all(|e| (21..=108).contains(&e.midi)));
    }
});
