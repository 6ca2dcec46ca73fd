//! Replays the checked-in fuzz corpus seeds through the fuzz target checks.
//! Every seed should be a valid input.

use std::fs;
use std::path::PathBuf;

use duallearn::data::{parse_csv, CsvSchema, LabelKind};
use duallearn::models::{parse_model, write_model};
use duallearn::primaldual::parse_trace;
use duallearn_cli::config::parse_config;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.clone(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn model_seeds_roundtrip() {
    for (path, text) in seeds("model_text") {
        let model = parse_model(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_model(&write_model(&model)).unwrap(), model);
    }
}

#[test]
fn csv_seeds_parse() {
    for (path, text) in seeds("csv") {
        let mut schema = CsvSchema::new("y");
        if text.starts_with("x1") {
            schema.group = Some("group".into());
        } else {
            schema.label_kind = LabelKind::Real;
        }
        let loaded = parse_csv(text.as_bytes(), "seed", &schema)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!loaded.dataset.is_empty());
    }
}

#[test]
fn trace_seeds_parse() {
    for (path, text) in seeds("trace_jsonl") {
        let lines = parse_trace(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(lines.len(), text.lines().count());
    }
}

#[test]
fn config_seeds_resolve_and_echo() {
    for (path, text) in seeds("config") {
        let mut cfg = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.resolve().unwrap();
        let echo = serde_json::to_string(&cfg).unwrap();
        let mut again = parse_config(&echo).unwrap();
        again.resolve().unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), echo);
    }
}
