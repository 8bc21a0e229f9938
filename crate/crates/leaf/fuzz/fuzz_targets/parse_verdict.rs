#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(verdict) = leaf::prompt::parse_verdict(text) {
        assert_eq!(verdict.raw, text, "verdict must keep the raw output");
    }
});
