#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = amt_core::signal::decode_wav(data) {
        assert!(clip.num_channels() >= 1);
        assert!(clip
            .channels()
            .iter()
            .flatten()
            .all(|v| v.is_finite() && v.abs() <= 1.0));
    }
});
