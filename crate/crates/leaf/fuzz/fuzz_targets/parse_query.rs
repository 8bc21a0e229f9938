#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(query) = leaf::prompt::parse_query(text) {
        assert!(!query.trim().is_empty(), "parsed query must be non-blank");
    }
});
