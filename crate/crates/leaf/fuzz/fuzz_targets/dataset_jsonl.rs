#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(items) = leaf::eval::load_dataset_from_reader(data, Path::new("fuzz.jsonl")) else {
        return;
    };
    for item in &items {
        assert!(item.letters().contains(&item.gold));
        let _ = item.options_line();
        let _ = item.context_string();
    }
});
