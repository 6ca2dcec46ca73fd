//! Line-delimited JSON traces. Each line holds one iteration; parameter
//! snapshots live in sidecar model files referenced by relative path.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RandomizedSolution, TrainTrace};
use crate::error::{Error, Result};
use crate::models::{read_model, write_model, ModelState};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub t: usize,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub mu: Vec<f64>,
    pub lagrangian: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<String>,
}

fn snapshot_path(t: usize) -> String {
    format!("{SNAPSHOT_DIR}/theta_{t:06}.txt")
}

/// The JSONL text of `trace`, with snapshot paths for kept iterates.
pub fn trace_jsonl(trace: &TrainTrace) -> Result<String> {
    let mut out = String::new();
    for r in &trace.records {
        let line = TraceLine {
            t: r.t,
            objective: r.objective,
            slacks: r.slacks.clone(),
            mu: r.mu.clone(),
            lagrangian: r.lagrangian,
            theta: r.theta.as_ref().map(|_| snapshot_path(r.t)),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `trace.jsonl` and the snapshot files into `dir`.
pub fn write_trace(trace: &TrainTrace, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
    for r in &trace.records {
        if let Some(theta) = &r.theta {
            let model = ModelState::new(trace.arch.clone(), theta.clone())?;
            fs::write(dir.join(snapshot_path(r.t)), write_model(&model))?;
        }
    }
    let path = dir.join(TRACE_FILE);
    fs::write(&path, trace_jsonl(trace)?)?;
    Ok(path)
}

/// Decodes and checks a trace: iterations numbered 1, 2, ...; slack and
/// multiplier vectors of one common length; multipliers nonnegative.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>> {
    let mut lines = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: TraceLine =
            serde_json::from_str(raw).map_err(|e| Error::parse(ln, e.to_string()))?;
        if line.t != lines.len() + 1 {
            return Err(Error::parse(
                ln,
                format!("expected t = {}, found {}", lines.len() + 1, line.t),
            ));
        }
        if line.slacks.len() != line.mu.len() {
            return Err(Error::parse(ln, "slacks and mu differ in length"));
        }
        if *width.get_or_insert(line.mu.len()) != line.mu.len() {
            return Err(Error::parse(ln, "constraint count changes between lines"));
        }
        if line.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::parse(
                ln,
                "multipliers must be finite and nonnegative",
            ));
        }
        if let Some(p) = &line.theta {
            check_relative(p).map_err(|m| Error::parse(ln, m))?;
        }
        lines.push(line);
    }
    Ok(lines)
}

fn check_relative(path: &str) -> std::result::Result<(), String> {
    let p = Path::new(path);
    if p.components().all(|c| matches!(c, Component::Normal(_))) && !path.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "snapshot path `{path}` must be relative and stay inside the run"
        ))
    }
}

pub fn read_trace_lines(path: &Path) -> Result<Vec<TraceLine>> {
    parse_trace(&fs::read_to_string(path)?)
}

/// Rebuilds the randomized solution of the run stored in `dir`.
pub fn load_randomized(dir: &Path) -> Result<RandomizedSolution> {
    let lines = read_trace_lines(&dir.join(TRACE_FILE))?;
    let mut arch = None;
    let mut thetas = Vec::with_capacity(lines.len());
    for l in &lines {
        let rel = l.theta.as_ref().ok_or_else(|| {
            Error::input(format!(
                "iteration {} has no snapshot; the trace is strided",
                l.t
            ))
        })?;
        let model = read_model(dir.join(rel))?;
        if *arch.get_or_insert_with(|| model.arch.clone()) != model.arch {
            return Err(Error::input(format!(
                "snapshot {rel} has a different architecture"
            )));
        }
        thetas.push(model.params);
    }
    let arch = arch.ok_or_else(|| Error::input("trace is empty"))?;
    RandomizedSolution::new(arch, thetas)
}
