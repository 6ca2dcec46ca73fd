//! The four commands. Each resolves its config, runs, and writes a run
//! directory holding `config.json`, `seed`, `trace.jsonl` and
//! `summary.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duallearn::bounds::{gap_report, measure_xi, zeta_vc, BoundsInputs, BoundsReport};
use duallearn::data::{group_split, load_csv, synth_two_gaussians, CsvSchema};
use duallearn::lagrangian::evaluate;
use duallearn::models::{read_model, write_model};
use duallearn::oracle::{example1_trial, Example1Trial};
use duallearn::primaldual::{
    load_randomized, randomized_solution, write_trace, TrainConfig, TrainOutcome, TRACE_FILE,
};
use duallearn::problem::empirical_risk;
use duallearn::rate::{margin_check, MarginReport};
use duallearn::{
    train as run_train, train_alternating, ConstraintSpec, Dataset, Label, LossKind, LossSpec,
    ModelState, Problem, RiskTerm,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, DataSource, InitKind, ProblemSection, Variant};

pub const ENV_OUT: &str = "DUALLEARN_OUT";

/// Picks the run directory: `--out`, then `output.root`, then
/// `DUALLEARN_OUT`, then `runs`; the name defaults to
/// `<command>-seed<seed>`. Records both choices in `cfg`.
fn run_dir(cfg: &mut Config, out: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    let root = out
        .or_else(|| cfg.output.root.clone())
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let name = cfg
        .output
        .name
        .clone()
        .unwrap_or_else(|| format!("{command}-seed{}", cfg.seed));
    cfg.output.root = Some(root.clone());
    cfg.output.name = Some(name.clone());
    let dir = root.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("output: cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("output: cannot write {}", path.display()))
}

fn write_common(dir: &Path, cfg: &Config) -> Result<()> {
    write_json(&dir.join("config.json"), cfg)?;
    fs::write(dir.join("seed"), format!("{}\n", cfg.seed))?;
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("output: cannot write {}", path.display()))
}

/// The data and problem described by the `problem` section.
pub struct Built {
    pub problem: Problem,
    pub all: Dataset,
    pub groups: Option<BTreeMap<String, Dataset>>,
}

fn load_data(source: &DataSource) -> Result<(Dataset, Option<Vec<String>>)> {
    match source {
        DataSource::Csv {
            path,
            label,
            group,
            features,
            label_kind,
        } => {
            let schema = CsvSchema {
                label: label.clone(),
                group: group.clone(),
                features: features.clone(),
                label_kind: *label_kind,
            };
            let loaded = load_csv(path, &schema)
                .with_context(|| format!("data: cannot load {}", path.display()))?;
            Ok((loaded.dataset, loaded.groups))
        }
        DataSource::TwoGaussians {
            means,
            sigma,
            n,
            seed,
        } => {
            let data =
                synth_two_gaussians([&means[0], &means[1]], *sigma, *n, seed.unwrap_or_default())
                    .context("data: cannot generate two-gaussians")?;
            Ok((data, None))
        }
    }
}

pub fn build(cfg: &Config) -> Result<Built> {
    let Some(section) = &cfg.problem else {
        bail!("config: at `problem`: this command needs a problem section");
    };
    let ProblemSection {
        data,
        objective,
        constraints,
    } = section;
    let (all, labels) = load_data(data)?;
    let groups = labels
        .as_deref()
        .map(|g| group_split(&all, g))
        .transpose()
        .context("data: group split failed")?;
    let train_attack = cfg
        .attack
        .as_ref()
        .map(|a| a.train.to_attack())
        .transpose()
        .context("config: at `attack.train`")?;
    let mut specs = Vec::new();
    for (i, c) in constraints.iter().enumerate() {
        let targets: Vec<Dataset> = match (&c.group, &groups) {
            (None, _) => vec![all.clone()],
            (Some(g), Some(map)) if g == "*" => map.values().cloned().collect(),
            (Some(g), Some(map)) => vec![map.get(g).cloned().with_context(|| {
                format!("config: at `problem.constraints[{i}].group`: no group `{g}`")
            })?],
            (Some(_), None) => {
                bail!("config: at `problem.constraints[{i}].group`: no group column")
            }
        };
        for dataset in targets {
            let mut term = RiskTerm::new(c.loss, dataset);
            if c.relative_to_all {
                term = term.with_reference(all.clone());
            }
            if c.adversarial {
                let attack = train_attack
                    .clone()
                    .context("config: adversarial constraint without attack")?;
                term = term.with_attack(attack);
            }
            let mut spec = ConstraintSpec::new(term, c.threshold);
            if let Some(s) = c.surrogate {
                spec = spec.with_surrogate(s);
            }
            specs.push(spec);
        }
    }
    let problem = Problem::new(RiskTerm::new(*objective, all.clone()), specs)
        .context("problem: invalid problem")?;
    Ok(Built {
        problem,
        all,
        groups,
    })
}

fn initial_model(cfg: &Config, inputs: usize) -> Result<ModelState> {
    if let Some(path) = &cfg.model.load {
        return read_model(path).with_context(|| format!("models: cannot load {}", path.display()));
    }
    let arch = cfg.model.architecture(inputs);
    let model = match cfg.model.init {
        InitKind::Zeros => ModelState::zeros(arch),
        InitKind::Random => ModelState::init(arch, cfg.model.init_seed.unwrap_or(cfg.seed)),
    };
    model.context("models: invalid architecture")
}

#[derive(Debug, Serialize)]
pub struct MixtureSummary {
    pub objective: f64,
    pub slacks: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub command: &'static str,
    pub iterations: usize,
    pub constraints: usize,
    pub final_objective: f64,
    pub final_slacks: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub ergodic_objective: f64,
    pub ergodic_slacks: Vec<f64>,
    pub ergodic_complementary_slackness: f64,
    pub complementary_slackness_floor: f64,
    /// Risks of the uniform mixture of iterates; absent for strided traces.
    pub randomized: Option<MixtureSummary>,
    pub margins: Option<MarginReport>,
}

pub struct TrainArgs {
    pub iterations: Option<usize>,
    pub dual_step: Option<f64>,
    pub variant: Option<Variant>,
}

pub fn train(cfg: &mut Config, out: Option<PathBuf>, args: &TrainArgs) -> Result<PathBuf> {
    if let Some(t) = args.iterations {
        cfg.dual.iterations = t;
    }
    if let Some(eta) = args.dual_step {
        cfg.dual.step = eta;
    }
    if let Some(v) = args.variant {
        cfg.dual.variant = v;
    }
    cfg.resolve()?;
    let built = build(cfg)?;
    let init = initial_model(cfg, built.all.dim())?;
    let train_cfg = TrainConfig {
        iterations: cfg.dual.iterations,
        dual_step: cfg.dual.step,
        dual_method: cfg.dual.method,
        inner: cfg.inner.clone(),
        seed: cfg.seed,
        snapshot_stride: cfg.dual.snapshot_stride,
    };
    let outcome: TrainOutcome = match cfg.dual.variant {
        Variant::Standard => run_train(&built.problem, &train_cfg, &init),
        Variant::Alternating => train_alternating(&built.problem, &train_cfg, &init),
    }
    .context("primaldual: training failed")?;

    let dir = run_dir(cfg, out, "train")?;
    write_common(&dir, cfg)?;
    write_trace(&outcome.trace, &dir).context("primaldual: cannot write trace")?;
    fs::write(dir.join("model.txt"), write_model(&outcome.model))?;

    let last = evaluate(&outcome.model, &built.problem).context("lagrangian: evaluation failed")?;
    let randomized = match randomized_solution(&outcome.trace) {
        Ok(sol) => Some(MixtureSummary {
            objective: sol.evaluate_term(&built.problem.objective)?,
            slacks: sol.slacks(&built.problem)?,
        }),
        Err(_) => None,
    };
    let has_rate = built
        .problem
        .constraints
        .iter()
        .any(|c| matches!(c.term.loss.kind, LossKind::RateIndicator { .. }));
    let margins = if has_rate {
        Some(margin_check(&outcome.model, &built.problem, 0.05).context("rate: margin check")?)
    } else {
        None
    };
    let summary = TrainSummary {
        command: "train",
        iterations: outcome.trace.len(),
        constraints: built.problem.m(),
        final_objective: last.objective,
        final_slacks: last.slacks,
        final_mu: outcome.trace.final_mu.clone(),
        ergodic_objective: outcome.trace.ergodic_objective(),
        ergodic_slacks: outcome.trace.ergodic_slacks(),
        ergodic_complementary_slackness: outcome.trace.ergodic_complementary_slackness(),
        complementary_slackness_floor: -outcome.trace.dual_step
            * built.problem.slack_bound_sq_sum()
            / 2.0,
        randomized,
        margins,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Metrics {
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub accuracy: Option<f64>,
    pub adversarial_objective: Option<f64>,
    pub overall_rate: Option<f64>,
    pub group_rates: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize)]
struct EvalRecord<'a> {
    index: usize,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub command: &'static str,
    pub source: String,
    pub models: usize,
    /// Metrics of the single model, or their mean over the mixture.
    pub metrics: Metrics,
}

fn metrics(model: &ModelState, built: &Built, cfg: &Config) -> Result<Metrics> {
    let eval = evaluate(model, &built.problem).context("lagrangian: evaluation failed")?;
    let classes = built.all.iter().all(|s| matches!(s.label, Label::Class(_)));
    let accuracy = if classes {
        Some(1.0 - empirical_risk(model, &LossSpec::zero_one(), &built.all)?)
    } else {
        None
    };
    let adversarial_objective = match &cfg.attack {
        Some(a) => {
            let attack = a
                .eval
                .as_ref()
                .context("attack eval unresolved")?
                .to_attack()?;
            Some(
                RiskTerm::new(built.problem.objective.loss, built.all.clone())
                    .with_attack(attack)
                    .risk(model)
                    .context("robust: attack failed")?,
            )
        }
        None => None,
    };
    let (overall_rate, group_rates) = match (&built.groups, model.output_dim()) {
        (Some(groups), 1) => {
            let rate = LossSpec::rate_indicator(cfg.surrogate.shift)?;
            let mut rates = BTreeMap::new();
            for (name, g) in groups {
                rates.insert(name.clone(), empirical_risk(model, &rate, g)?);
            }
            (Some(empirical_risk(model, &rate, &built.all)?), Some(rates))
        }
        _ => (None, None),
    };
    Ok(Metrics {
        objective: eval.objective,
        slacks: eval.slacks,
        accuracy,
        adversarial_objective,
        overall_rate,
        group_rates,
    })
}

fn mean_metrics(all: &[Metrics]) -> Metrics {
    let k = all.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / k;
    let mean_opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        all.iter()
            .map(f)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / k)
    };
    let first = &all[0];
    Metrics {
        objective: mean(&|m| m.objective),
        slacks: (0..first.slacks.len())
            .map(|i| mean(&|m| m.slacks[i]))
            .collect(),
        accuracy: mean_opt(&|m| m.accuracy),
        adversarial_objective: mean_opt(&|m| m.adversarial_objective),
        overall_rate: mean_opt(&|m| m.overall_rate),
        group_rates: first.group_rates.as_ref().map(|g| {
            g.keys()
                .map(|name| {
                    let v = mean(&|m| m.group_rates.as_ref().map_or(0.0, |r| r[name]));
                    (name.clone(), v)
                })
                .collect()
        }),
    }
}

pub enum EvalTarget {
    Model(PathBuf),
    /// A train run directory; evaluates the mixture of its iterates.
    Run(PathBuf),
}

pub fn eval(cfg: &mut Config, out: Option<PathBuf>, target: &EvalTarget) -> Result<PathBuf> {
    cfg.resolve()?;
    let built = build(cfg)?;
    let (source, models) = match target {
        EvalTarget::Model(p) => (
            p.display().to_string(),
            vec![read_model(p).with_context(|| format!("models: cannot load {}", p.display()))?],
        ),
        EvalTarget::Run(d) => {
            let sol = load_randomized(d)
                .with_context(|| format!("primaldual: cannot load run {}", d.display()))?;
            (d.display().to_string(), sol.models().collect())
        }
    };
    let per_model = models
        .iter()
        .map(|m| metrics(m, &built, cfg))
        .collect::<Result<Vec<_>>>()?;
    let dir = run_dir(cfg, out, "eval")?;
    write_common(&dir, cfg)?;
    let records: Vec<EvalRecord> = per_model
        .iter()
        .enumerate()
        .map(|(index, metrics)| EvalRecord { index, metrics })
        .collect();
    write_lines(&dir.join(TRACE_FILE), &records)?;
    write_json(
        &dir.join("summary.json"),
        &EvalSummary {
            command: "eval",
            source,
            models: per_model.len(),
            metrics: mean_metrics(&per_model),
        },
    )?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
pub struct Example1Summary {
    pub command: &'static str,
    pub trials: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub first_seed: u64,
    pub at_one_eighth: usize,
    pub fraction_at_one_eighth: f64,
    pub infeasible: usize,
}

pub struct Example1Args {
    pub trials: usize,
    pub n: usize,
    pub parallel_trials: usize,
}

/// Trial `i` uses seed `seed + i`.
pub fn example1(cfg: &mut Config, out: Option<PathBuf>, args: &Example1Args) -> Result<PathBuf> {
    cfg.resolve()?;
    if args.trials == 0 || args.n == 0 {
        bail!("example1: trials and n must be at least 1");
    }
    let seed = cfg.seed;
    let run = |i: usize| example1_trial(args.n, seed.wrapping_add(i as u64));
    let trials: Vec<Example1Trial> = if args.parallel_trials > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallel_trials)
            .build()?
            .install(|| {
                (0..args.trials)
                    .into_par_iter()
                    .map(run)
                    .collect::<duallearn::Result<Vec<_>>>()
            })
    } else {
        (0..args.trials).map(run).collect()
    }
    .context("oracle: example1 trial failed")?;
    let at = trials
        .iter()
        .filter(|t| t.population_j == Some(0.125))
        .count();
    let dir = run_dir(cfg, out, "example1")?;
    write_common(&dir, cfg)?;
    write_lines(&dir.join(TRACE_FILE), &trials)?;
    write_json(
        &dir.join("summary.json"),
        &Example1Summary {
            command: "example1",
            trials: trials.len(),
            n: args.n,
            first_seed: seed,
            at_one_eighth: at,
            fraction_at_one_eighth: at as f64 / trials.len() as f64,
            infeasible: trials.iter().filter(|t| t.theta_hat.is_none()).count(),
        },
    )?;
    Ok(dir)
}

pub struct BoundsArgs {
    pub xi: Option<f64>,
    pub delta: Option<f64>,
}

/// Fills `cfg.bounds` from the problem where possible, then reports.
pub fn bounds(cfg: &mut Config, out: Option<PathBuf>, args: &BoundsArgs) -> Result<PathBuf> {
    if let Some(xi) = args.xi {
        cfg.bounds.xi = Some(xi);
    }
    if let Some(d) = args.delta {
        cfg.bounds.delta = d;
    }
    cfg.resolve()?;
    let built = cfg.problem.as_ref().map(|_| build(cfg)).transpose()?;
    let b = &mut cfg.bounds;
    if let Some(built) = &built {
        b.bound.get_or_insert_with(|| built.problem.loss_bound());
        if b.thresholds.is_empty() {
            b.thresholds = built
                .problem
                .constraints
                .iter()
                .map(|c| c.threshold)
                .collect();
        }
        b.samples.get_or_insert(built.all.len());
    }
    let bound = *b.bound.get_or_insert(1.0);
    if b.xi.is_none() {
        let built = built
            .as_ref()
            .context("bounds: set `bounds.xi` or give a problem to measure it on")?;
        let init = initial_model(cfg, built.all.dim())?;
        cfg.bounds.xi = Some(measure_xi(&init, &built.problem).context("bounds: measuring xi")?);
    }
    let b = &mut cfg.bounds;
    if b.zeta.is_none() {
        let (Some(d), Some(n)) = (b.vc_dim, b.samples) else {
            bail!("bounds: set `bounds.zeta`, or `bounds.vc_dim` and `bounds.samples`");
        };
        let z = zeta_vc(n, d, b.delta, bound).context("bounds: VC radius")?;
        b.zeta = Some(vec![z; b.thresholds.len() + 1]);
    }
    let inputs = BoundsInputs {
        bound,
        lipschitz: b.lipschitz,
        nu: b.nu,
        xi: b.xi.unwrap_or_default(),
        delta: b.delta,
        zeta: b.zeta.clone().unwrap_or_default(),
        thresholds: b.thresholds.clone(),
        observed_multiplier_norm: b.observed_multiplier_norm,
    };
    let report: BoundsReport = gap_report(&inputs).context("bounds: report failed")?;
    let dir = run_dir(cfg, out, "bounds")?;
    write_common(&dir, cfg)?;
    write_lines(&dir.join(TRACE_FILE), std::slice::from_ref(&report))?;
    write_json(&dir.join("summary.json"), &report)?;
    Ok(dir)
}
