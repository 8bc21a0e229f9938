#![no_main]

use libfuzzer_sys::fuzz_target;

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let sentences = leaf::sentences::split_sentences(text);
    for s in &sentences {
        assert!(!s.is_empty(), "splitter emitted an empty sentence");
        assert_eq!(s.trim(), s, "splitter emitted an untrimmed sentence");
    }
    assert_eq!(
        strip_ws(&sentences.join(" ")),
        strip_ws(text),
        "joined sentences must preserve every non-whitespace character"
    );
});
