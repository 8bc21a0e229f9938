#![no_main]

use libfuzzer_sys::fuzz_target;

use leaf::prompt::{Bindings, PromptTemplate, TemplateKind};

fuzz_target!(|data: &[u8]| {
    let Ok(body) = std::str::from_utf8(data) else {
        return;
    };
    for kind in [
        TemplateKind::QueryGen,
        TemplateKind::FactCheck,
        TemplateKind::FcRag,
    ] {
        let Ok(template) = PromptTemplate::new(kind, body) else {
            continue;
        };
        let mut bindings = Bindings::new();
        let mut values_len = 0usize;
        for &ph in kind.required() {
            let value = format!("<{}>", ph.name());
            values_len += value.len();
            bindings = bindings.set(ph, value);
        }
        let rendered = template
            .render(&bindings)
            .expect("every required placeholder is bound");
        let tokens_len: usize = kind.required().iter().map(|ph| ph.token().len()).sum();
        // Each placeholder occurs exactly once, so rendering swaps exactly
        // one token per binding and changes the length by the difference.
        assert_eq!(rendered.len(), body.len() - tokens_len + values_len);
        for &ph in kind.required() {
            assert!(rendered.contains(&format!("<{}>", ph.name())));
        }
    }
});
