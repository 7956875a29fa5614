#![no_main]

use amt_core::notes::{decode_midi, encode_midi};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = decode_midi(data) {
        for e in &events {
            assert!(e.offset_s > e.onset_s);
        }
        // rounding to the writer's tick grid can only drop notes; files past
        // the writer's range are refused
        if let Ok(bytes) = encode_midi(&events) {
            let again = decode_midi(&bytes).expect("own output decodes");
            assert!(again.len() <= events.len());
        }
    }
});
