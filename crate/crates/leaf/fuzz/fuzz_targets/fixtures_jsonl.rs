#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

use leaf::gateway::{Backend, GenRequest, MockBackend};

fuzz_target!(|data: &[u8]| {
    let Ok(mock) = MockBackend::from_fixtures_reader(data, Path::new("fuzz.jsonl")) else {
        return;
    };
    // Drive one request through whatever patterns the input defined, so
    // both regex and substring matchers run against a realistic prompt.
    let req = GenRequest::user(
        "fuzz",
        "KNOWLEDGE:\nN/A\n\nQUESTION:\nWhich option?\n\nOPTIONS:\n(A) x (B) y\n\nANSWER:\n",
        0.0,
        1,
        16,
    );
    let _ = mock.generate(&req);
});
