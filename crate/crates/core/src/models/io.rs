//! Versioned text format for model parameters:
//!
//! ```text
//! duallearn-model 1
//! arch mlp tanh sigmoid 3,16,1
//! params 81
//! 0.125
//! ...
//! ```
//!
//! Architecture lines are `arch linear <in> <out> bias|nobias`,
//! `arch logistic <in>` or `arch mlp <tanh|relu> <identity|sigmoid> <widths>`.
//! Parameters are written one per line in shortest round-trip decimal form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Activation, Architecture, ModelState, OutputHead};

pub const MODEL_MAGIC: &str = "duallearn-model";
const VERSION: u32 = 1;

pub fn write_model(model: &ModelState) -> String {
    let mut out = format!("{MODEL_MAGIC} {VERSION}\n");
    let arch = match &model.arch {
        Architecture::Linear {
            inputs,
            outputs,
            bias,
        } => format!(
            "linear {inputs} {outputs} {}",
            if *bias { "bias" } else { "nobias" }
        ),
        Architecture::Logistic { inputs } => format!("logistic {inputs}"),
        Architecture::Mlp {
            widths,
            activation,
            head,
        } => {
            let act = match activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            };
            let head = match head {
                OutputHead::Identity => "identity",
                OutputHead::Sigmoid => "sigmoid",
            };
            let w: Vec<String> = widths.iter().map(usize::to_string).collect();
            format!("mlp {act} {head} {}", w.join(","))
        }
    };
    let _ = writeln!(out, "arch {arch}");
    let _ = writeln!(out, "params {}", model.params.len());
    for p in &model.params {
        let _ = writeln!(out, "{p:?}");
    }
    out
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

fn parse_arch(text: &str, line: usize) -> Result<Architecture> {
    let mut toks = text.split_ascii_whitespace();
    if toks.next() != Some("arch") {
        return Err(Error::parse(line, "expected `arch` line"));
    }
    let arch = match toks.next() {
        Some("linear") => {
            let inputs = parse_usize(toks.next(), line, "input width")?;
            let outputs = parse_usize(toks.next(), line, "output width")?;
            let bias = match toks.next() {
                Some("bias") => true,
                Some("nobias") => false,
                other => return Err(Error::parse(line, format!("invalid bias flag {other:?}"))),
            };
            Architecture::linear(inputs, outputs, bias)
        }
        Some("logistic") => Architecture::logistic(parse_usize(toks.next(), line, "input width")?),
        Some("mlp") => {
            let activation = match toks.next() {
                Some("tanh") => Activation::Tanh,
                Some("relu") => Activation::Relu,
                other => return Err(Error::parse(line, format!("invalid activation {other:?}"))),
            };
            let head = match toks.next() {
                Some("identity") => OutputHead::Identity,
                Some("sigmoid") => OutputHead::Sigmoid,
                other => return Err(Error::parse(line, format!("invalid output head {other:?}"))),
            };
            let widths = toks
                .next()
                .ok_or_else(|| Error::parse(line, "missing widths"))?
                .split(',')
                .map(|w| parse_usize(Some(w), line, "width"))
                .collect::<Result<Vec<_>>>()?;
            Architecture::mlp(widths, activation, head)
        }
        other => {
            return Err(Error::parse(
                line,
                format!("unknown architecture {other:?}"),
            ))
        }
    };
    if let Some(extra) = toks.next() {
        return Err(Error::parse(line, format!("unexpected token `{extra}`")));
    }
    arch.validate()
        .map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(arch)
}

/// Decodes the text produced by [`write_model`].
pub fn parse_model(text: &str) -> Result<ModelState> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of input, expected {what}")))
    };

    let (ln, header) = next("header")?;
    match header
        .split_ascii_whitespace()
        .collect::<Vec<_>>()
        .as_slice()
    {
        [magic, v] if *magic == MODEL_MAGIC => {
            if parse_usize(Some(v), ln, "version")? != VERSION as usize {
                return Err(Error::parse(ln, format!("unsupported version {v}")));
            }
        }
        _ => return Err(Error::parse(ln, "missing model header")),
    }

    let (ln, arch_line) = next("arch line")?;
    let arch = parse_arch(arch_line, ln)?;

    let (ln, count_line) = next("params line")?;
    let count = match count_line
        .split_ascii_whitespace()
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["params", n] => parse_usize(Some(n), ln, "parameter count")?,
        _ => return Err(Error::parse(ln, "expected `params <count>`")),
    };
    if count != arch.param_count() {
        return Err(Error::parse(
            ln,
            format!(
                "architecture has {} parameters, header declares {count}",
                arch.param_count()
            ),
        ));
    }

    let mut params = Vec::new();
    for (ln, l) in lines.by_ref() {
        if l.is_empty() {
            continue;
        }
        if params.len() == count {
            return Err(Error::parse(ln, "more parameters than declared"));
        }
        let v: f64 = l
            .parse()
            .map_err(|_| Error::parse(ln, format!("invalid number `{l}`")))?;
        if !v.is_finite() {
            return Err(Error::parse(ln, "parameter is not finite"));
        }
        params.push(v);
    }
    if params.len() != count {
        return Err(Error::parse(
            0,
            format!("expected {count} parameters, found {}", params.len()),
        ));
    }
    ModelState::new(arch, params)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelState> {
    parse_model(&fs::read_to_string(path)?)
}
