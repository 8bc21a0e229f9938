#![no_main]

use std::cmp::Ordering;

use libfuzzer_sys::fuzz_target;

use leaf::corpus::Bm25Index;

fuzz_target!(|data: &[u8]| {
    let Ok(index) = Bm25Index::load_from_reader(data) else {
        return;
    };
    // A loaded index rebuilds its postings, so retrieval must hold its
    // contract: at most k hits, scores in non-increasing order.
    let hits = index.retrieve("slipped capital femoral epiphysis hip", 5);
    assert!(hits.len() <= 5);
    for pair in hits.windows(2) {
        assert_ne!(pair[0].score.total_cmp(&pair[1].score), Ordering::Less);
    }
});
