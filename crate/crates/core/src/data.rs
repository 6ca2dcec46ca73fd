//! CSV ingestion, group-conditional views and synthetic datasets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Dataset, Label, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Nonnegative integer class indices.
    #[default]
    Class,
    Real,
}

/// Which CSV columns hold the label, the group and the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label: String,
    #[serde(default)]
    pub group: Option<String>,
    /// Feature columns in order; empty means every other column.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub label_kind: LabelKind,
}

impl CsvSchema {
    pub fn new(label: impl Into<String>) -> Self {
        CsvSchema {
            label: label.into(),
            group: None,
            features: Vec::new(),
            label_kind: LabelKind::Class,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    /// Group of each sample when the schema names a group column.
    pub groups: Option<Vec<String>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::config(format!("missing column `{name}`")))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

/// Reads comma-separated text with a mandatory header row.
pub fn parse_csv<R: Read>(reader: R, name: &str, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::input("CSV has no header row"));
    }
    let label_col = column(&headers, &schema.label)?;
    let group_col = schema
        .group
        .as_deref()
        .map(|g| column(&headers, g))
        .transpose()?;
    let feature_names: Vec<String> = if schema.features.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col && Some(*i) != group_col)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.features.clone()
    };
    let feature_cols = feature_names
        .iter()
        .map(|f| column(&headers, f))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            let text = cell(i);
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(
                    line,
                    format!("column `{}`: `{text}` is not a finite number", &headers[i]),
                )),
            }
        };
        let features = feature_cols
            .iter()
            .map(|&i| number(i))
            .collect::<Result<Vec<_>>>()?;
        let label = match schema.label_kind {
            LabelKind::Real => Label::Real(number(label_col)?),
            LabelKind::Class => {
                let text = cell(label_col);
                Label::Class(text.parse::<usize>().map_err(|_| {
                    Error::parse(line, format!("label `{text}` is not a class index"))
                })?)
            }
        };
        if let (Some(g), Some(col)) = (groups.as_mut(), group_col) {
            g.push(cell(col).to_string());
        }
        samples.push(Sample::new(features, label));
    }
    if samples.is_empty() {
        return Err(Error::input("CSV has no data rows"));
    }
    Ok(LoadedCsv {
        dataset: Dataset::new(name, samples)?,
        feature_names,
        groups,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(File::open(path)?, &name, schema)
}

/// Writes `data` with columns `features..., label[, group]`. Numbers use
/// the shortest text that reads back to the same value.
pub fn write_csv<W: Write>(
    writer: W,
    data: &LoadedCsv,
    label_name: &str,
    group_name: Option<&str>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(label_name);
    if let Some(g) = group_name {
        header.push(g);
    }
    w.write_record(&header).map_err(csv_error)?;
    for (i, s) in data.dataset.iter().enumerate() {
        let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
        row.push(match s.label {
            Label::Class(k) => k.to_string(),
            Label::Real(v) => format!("{v:?}"),
        });
        if group_name.is_some() {
            let g = data
                .groups
                .as_ref()
                .and_then(|g| g.get(i))
                .ok_or_else(|| Error::input("group column requested but no groups loaded"))?;
            row.push(g.clone());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(
    path: impl AsRef<Path>,
    data: &LoadedCsv,
    label_name: &str,
    group_name: Option<&str>,
) -> Result<()> {
    write_csv(File::create(path)?, data, label_name, group_name)
}

/// One view per distinct group, in sorted group order, preserving the
/// sample order within each group. Views share storage with `dataset`.
pub fn group_split(dataset: &Dataset, groups: &[String]) -> Result<BTreeMap<String, Dataset>> {
    if groups.len() != dataset.len() {
        return Err(Error::input(format!(
            "{} group labels for {} samples",
            groups.len(),
            dataset.len()
        )));
    }
    let mut index: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        index.entry(g).or_default().push(i);
    }
    index
        .into_iter()
        .map(|(g, idx)| {
            Ok((
                g.to_string(),
                dataset.subset(format!("{}[{g}]", dataset.name()), &idx)?,
            ))
        })
        .collect()
}

/// `n` samples from two isotropic Gaussians: `n / 2` (rounded down) of
/// class 0 around `means[0]`, the rest of class 1 around `means[1]`,
/// interleaved.
pub fn synth_two_gaussians(means: [&[f64]; 2], sigma: f64, n: usize, seed: u64) -> Result<Dataset> {
    let dim = means[0].len();
    if dim == 0 || means[1].len() != dim {
        return Err(Error::input(
            "class means must be nonempty and of equal length",
        ));
    }
    if n < 2 {
        return Err(Error::input("need at least two samples"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::input("sigma must be positive"));
    }
    let zeros = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let class = if i < 2 * zeros { i % 2 } else { 1 };
            let features = means[class]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * z
                })
                .collect();
            Sample::new(features, Label::Class(class))
        })
        .collect();
    Dataset::new("two-gaussians", samples)
}
