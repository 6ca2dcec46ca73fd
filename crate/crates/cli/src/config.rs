//! Experiment configuration: a JSON tree with fixed sections. Unknown keys
//! are rejected, and [`Config::resolve`] fills every default explicitly so
//! the echo written to a run directory shows the values actually used.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duallearn::data::LabelKind;
use duallearn::models::{Activation, OptimizerConfig, OutputHead};
use duallearn::primaldual::DualMethod;
use duallearn::rate::SurrogateConfig;
use duallearn::robust::{AttackConfig, AttackKind};
use duallearn::{Architecture, InnerSolverConfig, LossKind, LossSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "default_inner")]
    pub inner: InnerSolverConfig,
    #[serde(default)]
    pub dual: DualSection,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            problem: None,
            model: ModelSection::default(),
            inner: default_inner(),
            dual: DualSection::default(),
            attack: None,
            surrogate: SurrogateConfig::default(),
            bounds: BoundsSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn default_inner() -> InnerSolverConfig {
    InnerSolverConfig::gradient(1, None, OptimizerConfig::adam(0.01))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub data: DataSource,
    pub objective: LossSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Relative paths are resolved against the config file's directory.
    Csv {
        path: PathBuf,
        label: String,
        #[serde(default)]
        group: Option<String>,
        #[serde(default)]
        features: Vec<String>,
        #[serde(default)]
        label_kind: LabelKind,
    },
    TwoGaussians {
        means: [Vec<f64>; 2],
        sigma: f64,
        n: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub loss: LossSpec,
    pub threshold: f64,
    /// Restrict to one group of a CSV source; `"*"` expands to one
    /// constraint per group.
    #[serde(default)]
    pub group: Option<String>,
    /// Subtract the same loss averaged over all data.
    #[serde(default)]
    pub relative_to_all: bool,
    /// Re-attack samples with the `attack.train` configuration.
    #[serde(default)]
    pub adversarial: bool,
    /// Rate constraints take the `surrogate` section when unset.
    #[serde(default)]
    pub surrogate: Option<SurrogateConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    #[default]
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zeros,
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_head")]
    pub head: OutputHead,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
    #[serde(default)]
    pub init: InitKind,
    /// Defaults to the run seed.
    #[serde(default)]
    pub init_seed: Option<u64>,
    /// Start from a saved model file instead.
    #[serde(default)]
    pub load: Option<PathBuf>,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_head() -> OutputHead {
    OutputHead::Identity
}
fn default_true() -> bool {
    true
}
fn default_outputs() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::default(),
            hidden: default_hidden(),
            activation: default_activation(),
            head: default_head(),
            bias: true,
            outputs: 1,
            init: InitKind::default(),
            init_seed: None,
            load: None,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, inputs: usize) -> Architecture {
        match self.kind {
            ModelKind::Linear => Architecture::linear(inputs, self.outputs, self.bias),
            ModelKind::Logistic => Architecture::logistic(inputs),
            ModelKind::Mlp => {
                let mut widths = vec![inputs];
                widths.extend(&self.hidden);
                widths.push(self.outputs);
                Architecture::mlp(widths, self.activation, self.head)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Standard,
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub method: DualMethod,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_iterations() -> usize {
    100
}
fn default_step() -> f64 {
    0.1
}
fn default_stride() -> usize {
    10
}

impl Default for DualSection {
    fn default() -> Self {
        DualSection {
            iterations: default_iterations(),
            step: default_step(),
            method: DualMethod::default(),
            variant: Variant::default(),
            snapshot_stride: default_stride(),
        }
    }
}

/// Attack settings with optional fields; unset fields follow the
/// training (`train`) or evaluation (`eval`) presets for `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default = "default_attack_kind")]
    pub kind: AttackKind,
    pub epsilon: f64,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub clamp_box: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_attack_kind() -> AttackKind {
    AttackKind::Pgd
}

impl AttackSpec {
    fn resolve(&mut self, preset: impl Fn(f64) -> AttackConfig, seed: u64) {
        let base = match self.kind {
            AttackKind::Fgsm => AttackConfig::fgsm(self.epsilon),
            AttackKind::Pgd => preset(self.epsilon),
        };
        self.steps.get_or_insert(base.steps);
        self.step_size.get_or_insert(base.step_size);
        self.restarts.get_or_insert(base.restarts);
        self.seed.get_or_insert(seed);
    }

    /// Only meaningful after [`Config::resolve`].
    pub fn to_attack(&self) -> Result<AttackConfig> {
        let cfg = AttackConfig {
            kind: self.kind,
            epsilon: self.epsilon,
            steps: self.steps.context("attack steps unresolved")?,
            step_size: self.step_size.context("attack step_size unresolved")?,
            restarts: self.restarts.context("attack restarts unresolved")?,
            clamp_box: self.clamp_box.clone(),
            seed: self.seed.context("attack seed unresolved")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub train: AttackSpec,
    /// Defaults to the evaluation preset at the training radius.
    #[serde(default)]
    pub eval: Option<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Loss bound `B`; defaults to the largest bound in the problem, or 1.
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default = "default_one")]
    pub lipschitz: f64,
    #[serde(default)]
    pub nu: f64,
    /// Strict-feasibility margin; measured at the initial model when unset
    /// and a problem is present.
    #[serde(default)]
    pub xi: Option<f64>,
    /// Explicit radii, objective first. When unset they come from the VC
    /// formula with `vc_dim` and `samples`.
    #[serde(default)]
    pub zeta: Option<Vec<f64>>,
    #[serde(default)]
    pub vc_dim: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub observed_multiplier_norm: Option<f64>,
}

fn default_delta() -> f64 {
    0.05
}
fn default_one() -> f64 {
    1.0
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            delta: default_delta(),
            bound: None,
            lipschitz: 1.0,
            nu: 0.0,
            xi: None,
            zeta: None,
            vc_dim: None,
            samples: None,
            thresholds: Vec::new(),
            observed_multiplier_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Parent of run directories. Precedence: `--out`, this key,
    /// `DUALLEARN_OUT`, `runs`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Run directory name; defaults to `<command>-seed<seed>`.
    #[serde(default)]
    pub name: Option<String>,
}

/// Parses config text, reporting the key path of any schema violation.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config: at `{path}`: {}", e.into_inner())
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("config: cannot read {}", path.display()))?;
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = path.parent() {
        cfg.rebase(dir);
    }
    Ok(cfg)
}

fn rebase_path(p: &mut PathBuf, dir: &Path) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

impl Config {
    /// Makes relative file paths relative to `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        if let Some(ProblemSection {
            data: DataSource::Csv { path, .. },
            ..
        }) = &mut self.problem
        {
            rebase_path(path, dir);
        }
        if let Some(p) = &mut self.model.load {
            rebase_path(p, dir);
        }
    }

    /// Fills every defaulted value and checks cross-section consistency.
    pub fn resolve(&mut self) -> Result<()> {
        let seed = self.seed;
        self.model.init_seed.get_or_insert(seed);
        if let Some(attack) = &mut self.attack {
            attack.train.resolve(AttackConfig::pgd_train, seed);
            let mut eval = attack.eval.take().unwrap_or_else(|| AttackSpec {
                kind: attack.train.kind,
                epsilon: attack.train.epsilon,
                steps: None,
                step_size: None,
                restarts: None,
                clamp_box: attack.train.clamp_box.clone(),
                seed: None,
            });
            eval.resolve(AttackConfig::pgd_eval, seed.wrapping_add(1));
            attack.eval = Some(eval);
        }
        self.surrogate
            .validate()
            .context("config: at `surrogate`")?;
        if let Some(problem) = &mut self.problem {
            if let DataSource::TwoGaussians { seed: s, .. } = &mut problem.data {
                s.get_or_insert(seed);
            }
            problem
                .objective
                .validate()
                .context("config: at `problem.objective`")?;
            for (i, c) in problem.constraints.iter_mut().enumerate() {
                c.loss
                    .validate()
                    .with_context(|| format!("config: at `problem.constraints[{i}].loss`"))?;
                if matches!(c.loss.kind, LossKind::RateIndicator { .. }) {
                    c.surrogate.get_or_insert(self.surrogate);
                }
                if c.adversarial && self.attack.is_none() {
                    bail!(
                        "config: at `problem.constraints[{i}].adversarial`: needs an `attack` section"
                    );
                }
                if c.group.is_some()
                    && !matches!(problem.data, DataSource::Csv { group: Some(_), .. })
                {
                    bail!(
                        "config: at `problem.constraints[{i}].group`: the data source has no group column"
                    );
                }
            }
        }
        if self.dual.iterations == 0 {
            bail!("config: at `dual.iterations`: must be at least 1");
        }
        if !(self.dual.step > 0.0 && self.dual.step.is_finite()) {
            bail!("config: at `dual.step`: must be positive");
        }
        if self.dual.snapshot_stride == 0 {
            bail!("config: at `dual.snapshot_stride`: must be at least 1");
        }
        self.inner.validate().context("config: at `inner`")?;
        Ok(())
    }
}
