#![no_main]

use amt_core::dictionary::Codebook;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(book) = Codebook::from_csv(text, "fuzz") {
        assert_eq!(book.labels().len(), book.rank());
        let back = Codebook::from_csv(&book.to_csv(), "fuzz").expect("own output parses");
        assert_eq!(back.labels(), book.labels());
    }
});
