#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    // First byte picks how many options the question offers (2..=9).
    let n = usize::from(first % 8) + 2;
    let valid: Vec<char> = ('A'..).take(n).collect();
    if let Ok(letter) = leaf::prompt::parse_mcq_answer(text, &valid) {
        assert!(
            valid.contains(&letter),
            "parsed letter must come from the valid set"
        );
    }
});
