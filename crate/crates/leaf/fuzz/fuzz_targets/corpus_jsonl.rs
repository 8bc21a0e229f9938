#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

use leaf::corpus::{load_corpus_from_reader, Bm25Index, Bm25Params};

fuzz_target!(|data: &[u8]| {
    let Ok(docs) = load_corpus_from_reader(data, Path::new("fuzz.jsonl")) else {
        return;
    };
    if let Ok(index) = Bm25Index::build(docs, Bm25Params::default()) {
        let hits = index.retrieve("fuzz query 13 year old hip", 3);
        assert!(hits.len() <= 3);
    }
});
