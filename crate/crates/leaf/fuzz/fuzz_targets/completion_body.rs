#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&first, body)) = data.split_first() else {
        return;
    };
    // First byte picks how many choices the caller asked for (1..=4).
    let expected_n = usize::from(first % 4) + 1;
    if let Ok((texts, _usage)) = leaf::gateway::parse_completion_body(body, expected_n) {
        assert_eq!(texts.len(), expected_n);
    }
});
