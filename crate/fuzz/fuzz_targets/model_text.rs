#![no_main]

use duallearn::models::{parse_model, write_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = parse_model(text) {
        // Whatever parses must survive a write and reparse.
        let again = parse_model(&write_model(&model)).expect("reparse");
        assert_eq!(write_model(&again), write_model(&model));
    }
});
