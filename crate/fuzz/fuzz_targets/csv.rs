#![no_main]

use duallearn::data::{parse_csv, CsvSchema, LabelKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for label_kind in [LabelKind::Class, LabelKind::Real] {
        let schema = CsvSchema {
            label: "y".into(),
            group: Some("group".into()),
            features: Vec::new(),
            label_kind,
        };
        let _ = parse_csv(data, "fuzz", &schema);
    }
});
