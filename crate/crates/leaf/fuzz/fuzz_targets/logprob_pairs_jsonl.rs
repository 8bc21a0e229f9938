#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

use leaf::simpo::{load_pairs_from_reader, loss, loss_grad, records_into_batch, SimpoParams};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = load_pairs_from_reader(data, Path::new("fuzz.jsonl")) else {
        return;
    };
    let Ok(batch) = records_into_batch(&records, SimpoParams::default()) else {
        return;
    };
    let _ = loss(&batch);
    let grads = loss_grad(&batch);
    assert_eq!(grads.len(), batch.pairs().len());
});
