//! Projected dual ascent over the empirical Lagrangian, its alternating
//! single-epoch variant, and the uniform mixture of iterates.

mod trace;

pub use trace::{
    load_randomized, parse_trace, read_trace_lines, trace_jsonl, write_trace, TraceLine,
    SNAPSHOT_DIR, TRACE_FILE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{
    self, DualState, InnerMethod, InnerReport, InnerSolver, InnerSolverConfig,
};
use crate::loss::LossSpec;
use crate::models::{Architecture, ModelState, OptimizerConfig, OptimizerState};
use crate::problem::{empirical_risk, Dataset, Problem, RiskTerm};

/// Models with more parameters than this keep only every
/// `snapshot_stride`-th iterate.
pub const FULL_SNAPSHOT_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DualMethod {
    /// `mu <- max(0, mu + eta * s)`.
    #[default]
    ProjectedAscent,
    /// An ADAM ascent step on `s` with its own step size, clamped at zero.
    ProjectedAdam { step_size: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub dual_step: f64,
    #[serde(default)]
    pub dual_method: DualMethod,
    pub inner: InnerSolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_stride() -> usize {
    10
}

impl TrainConfig {
    pub fn new(iterations: usize, dual_step: f64, inner: InnerSolverConfig) -> Self {
        TrainConfig {
            iterations,
            dual_step,
            dual_method: DualMethod::ProjectedAscent,
            inner,
            seed: 0,
            snapshot_stride: default_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.dual_step.is_finite() && self.dual_step > 0.0) {
            return Err(Error::config("dual step must be positive"));
        }
        if let DualMethod::ProjectedAdam { step_size } = self.dual_method {
            OptimizerConfig::adam(step_size).validate()?;
        }
        if self.snapshot_stride == 0 {
            return Err(Error::config("snapshot stride must be positive"));
        }
        self.inner.validate()
    }
}

/// One iteration: the primal iterate computed at `mu`, its objective risk,
/// slacks and Lagrangian value. `mu` is the multiplier *before* the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub mu: Vec<f64>,
    pub lagrangian: f64,
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub arch: Architecture,
    pub records: Vec<TraceRecord>,
    pub inner_reports: Vec<InnerReport>,
    /// Multipliers after the last update.
    pub final_mu: Vec<f64>,
    pub dual_step: f64,
    /// 1 when every iterate was kept.
    pub snapshot_stride: usize,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn m(&self) -> usize {
        self.final_mu.len()
    }

    /// `(1/T) sum_t mu_t . s_t`.
    pub fn ergodic_complementary_slackness(&self) -> f64 {
        let total: f64 = self
            .records
            .iter()
            .map(|r| r.mu.iter().zip(&r.slacks).map(|(m, s)| m * s).sum::<f64>())
            .sum();
        total / self.records.len() as f64
    }

    /// `-eta * m * B^2 / 2`, the lower bound on the ergodic complementary
    /// slackness of projected ascent with slacks in `[-B, B]`.
    pub fn complementary_slackness_floor(&self, bound: f64) -> f64 {
        -self.dual_step * self.m() as f64 * bound * bound / 2.0
    }

    /// Per-constraint mean slack over the iterates.
    pub fn ergodic_slacks(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for r in &self.records {
            for (o, s) in out.iter_mut().zip(&r.slacks) {
                *o += s;
            }
        }
        let t = self.records.len() as f64;
        out.iter_mut().for_each(|o| *o /= t);
        out
    }

    pub fn ergodic_objective(&self) -> f64 {
        self.records.iter().map(|r| r.objective).sum::<f64>() / self.records.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    /// The last primal iterate.
    pub model: ModelState,
    pub dual: DualState,
}

/// `mu_i <- max(0, mu_i + eta * s_i)`.
pub fn dual_update(dual: &DualState, slacks: &[f64], eta: f64) -> Result<DualState> {
    if dual.len() != slacks.len() {
        return Err(Error::input(format!(
            "{} multipliers for {} slacks",
            dual.len(),
            slacks.len()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config("dual step must be positive"));
    }
    if slacks.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("slack is not finite".into()));
    }
    DualState::new(
        dual.mu()
            .iter()
            .zip(slacks)
            .map(|(m, s)| (m + eta * s).max(0.0))
            .collect(),
    )
}

enum DualStepper {
    Ascent(f64),
    Adam(OptimizerState),
}

impl DualStepper {
    fn step(&mut self, dual: &DualState, slacks: &[f64]) -> Result<DualState> {
        match self {
            DualStepper::Ascent(eta) => dual_update(dual, slacks, *eta),
            DualStepper::Adam(opt) => {
                let mut mu = dual.mu().to_vec();
                let ascent: Vec<f64> = slacks.iter().map(|s| -s).collect();
                opt.step_params(&mut mu, &ascent)?;
                mu.iter_mut().for_each(|m| *m = m.max(0.0));
                DualState::new(mu)
            }
        }
    }
}

/// Projected dual ascent with the configured inner solver. Multipliers
/// start at zero.
pub fn train(problem: &Problem, config: &TrainConfig, init: &ModelState) -> Result<TrainOutcome> {
    config.validate()?;
    run(problem, config, init)
}

/// Dual ascent with a single warm-started primal epoch between dual
/// updates; the optimizer moments carry over from one epoch to the next.
pub fn train_alternating(
    problem: &Problem,
    config: &TrainConfig,
    init: &ModelState,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut cfg = config.clone();
    match &mut cfg.inner.method {
        InnerMethod::Gradient { epochs, .. } => *epochs = 1,
        InnerMethod::Enumeration { .. } => {
            return Err(Error::config(
                "the alternating variant needs a gradient inner solver",
            ))
        }
    }
    cfg.inner.warm_start = true;
    run(problem, &cfg, init)
}

fn run(problem: &Problem, config: &TrainConfig, init: &ModelState) -> Result<TrainOutcome> {
    let m = problem.m();
    let mut inner = InnerSolver::new(problem, &config.inner, init, config.seed)?;
    let mut stepper = match config.dual_method {
        DualMethod::ProjectedAscent => DualStepper::Ascent(config.dual_step),
        DualMethod::ProjectedAdam { step_size } => {
            DualStepper::Adam(OptimizerState::new(OptimizerConfig::adam(step_size), m)?)
        }
    };
    let stride = if init.params.len() <= FULL_SNAPSHOT_LIMIT {
        1
    } else {
        config.snapshot_stride
    };
    let mut dual = DualState::zeros(m);
    let mut model = init.clone();
    let mut records = Vec::with_capacity(config.iterations);
    let mut inner_reports = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let wrap = |e: Error| Error::Iteration {
            iteration: t,
            source: Box::new(e),
        };
        let (next, report) = inner.solve(&model, dual.mu()).map_err(wrap)?;
        model = next;
        let eval = match (report.candidate, inner.table()) {
            (Some(k), Some(table)) => table.evaluations[k].clone(),
            _ => lagrangian::evaluate(&model, problem).map_err(wrap)?,
        };
        let lagrangian = eval.lagrangian(dual.mu());
        let keep = (t - 1) % stride == 0;
        records.push(TraceRecord {
            t,
            objective: eval.objective,
            slacks: eval.slacks.clone(),
            mu: dual.mu().to_vec(),
            lagrangian,
            theta: keep.then(|| model.params.clone()),
        });
        inner_reports.push(report);
        dual = stepper.step(&dual, &eval.slacks).map_err(wrap)?;
    }
    Ok(TrainOutcome {
        trace: TrainTrace {
            arch: init.arch.clone(),
            records,
            inner_reports,
            final_mu: dual.mu().to_vec(),
            dual_step: config.dual_step,
            snapshot_stride: stride,
        },
        model,
        dual,
    })
}

/// Uniform mixture over every primal iterate of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedSolution {
    pub arch: Architecture,
    pub thetas: Vec<Vec<f64>>,
}

impl RandomizedSolution {
    pub fn new(arch: Architecture, thetas: Vec<Vec<f64>>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::input(
                "randomized solution needs at least one iterate",
            ));
        }
        for t in &thetas {
            ModelState::new(arch.clone(), t.clone())?;
        }
        Ok(RandomizedSolution { arch, thetas })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = ModelState> + '_ {
        self.thetas.iter().map(|t| ModelState {
            arch: self.arch.clone(),
            params: t.clone(),
        })
    }

    /// Mixture risk of a problem term (attacks and reference sets included).
    pub fn evaluate_term(&self, term: &RiskTerm) -> Result<f64> {
        let mut total = 0.0;
        for m in self.models() {
            total += term.risk(&m)?;
        }
        Ok(total / self.len() as f64)
    }

    /// Mixture slacks of every constraint of `problem`.
    pub fn slacks(&self, problem: &Problem) -> Result<Vec<f64>> {
        problem
            .constraints
            .iter()
            .map(|c| Ok(self.evaluate_term(&c.term)? - c.threshold))
            .collect()
    }
}

/// The mixture of all iterates of `trace`. Traces with strided snapshots
/// are refused.
pub fn randomized_solution(trace: &TrainTrace) -> Result<RandomizedSolution> {
    if trace.snapshot_stride != 1 {
        return Err(Error::input(format!(
            "trace keeps every {}th iterate; the randomized solution needs all of them",
            trace.snapshot_stride
        )));
    }
    let thetas = trace
        .records
        .iter()
        .map(|r| {
            r.theta
                .clone()
                .ok_or_else(|| Error::input(format!("iteration {} has no snapshot", r.t)))
        })
        .collect::<Result<Vec<_>>>()?;
    RandomizedSolution::new(trace.arch.clone(), thetas)
}

/// Mean empirical risk over the mixture's support.
pub fn evaluate_randomized(
    sol: &RandomizedSolution,
    loss: &LossSpec,
    dataset: &Dataset,
) -> Result<f64> {
    let mut total = 0.0;
    for m in sol.models() {
        total += empirical_risk(&m, loss, dataset)?;
    }
    Ok(total / sol.len() as f64)
}

/// Dual step `eta = 2 zeta_bar / (m B^2)` and iteration count
/// `T = ceil(U0 / (2 eta M nu)) + 1`.
pub fn recommend_hyperparams(
    bound: f64,
    m: usize,
    zeta_bar: f64,
    u0: f64,
    lipschitz: f64,
    nu: f64,
) -> Result<(f64, usize)> {
    if m == 0 {
        return Err(Error::config("no constraints: the dual step is undefined"));
    }
    for (name, v) in [
        ("B", bound),
        ("zeta_bar", zeta_bar),
        ("U0", u0),
        ("M", lipschitz),
        ("nu", nu),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(format!("{name} must be positive, got {v}")));
        }
    }
    let eta = 2.0 * zeta_bar / (m as f64 * bound * bound);
    let iters = (u0 / (2.0 * eta * lipschitz * nu)).ceil();
    if !(iters < 1e15) {
        return Err(Error::config("recommended iteration count overflows"));
    }
    Ok((eta, iters as usize + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ConstraintSpec, Label, Sample};

    #[test]
    fn dual_update_examples() {
        let d = DualState::new(vec![0.0]).unwrap();
        assert_eq!(dual_update(&d, &[0.0], 3.0).unwrap().mu(), &[0.0]);
        let d = DualState::new(vec![0.5]).unwrap();
        assert_eq!(dual_update(&d, &[-1.0], 1.0).unwrap().mu(), &[0.0]);
        let d = DualState::new(vec![1.0, 2.0]).unwrap();
        let u = dual_update(&d, &[0.3, -0.1], 0.5).unwrap();
        assert!((u.mu()[0] - 1.15).abs() < 1e-15 && (u.mu()[1] - 1.95).abs() < 1e-15);
        assert!(dual_update(&d, &[0.3], 0.5).is_err());
    }

    #[test]
    fn hyperparameter_substitution() {
        let (eta, _) = recommend_hyperparams(1.0, 2, 0.1, 1.0, 1.0, 0.5).unwrap();
        assert!((eta - 0.1).abs() < 1e-15);
        // U0 = 1, eta = 0.1, M = 1, nu = 0.5 -> ceil(10) + 1
        let (eta, t) = recommend_hyperparams(1.0, 1, 0.05, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(eta, 0.1);
        assert_eq!(t, 11);
        let (e2, _) = recommend_hyperparams(1.0, 2, 0.2, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(e2, 2.0 * 0.1);
        assert!(matches!(
            recommend_hyperparams(1.0, 0, 0.1, 1.0, 1.0, 0.5),
            Err(Error::Config(_))
        ));
    }

    fn toy() -> (Problem, ModelState) {
        let d = Dataset::new(
            "d",
            vec![
                Sample::new(vec![1.0], Label::Real(0.8)),
                Sample::new(vec![1.0], Label::Real(1.2)),
            ],
        )
        .unwrap();
        let obj = RiskTerm::new(LossSpec::squared(1.5).unwrap(), d.clone());
        let con = RiskTerm::new(LossSpec::linear_score(1.0, 0.0, 1.5).unwrap(), d);
        let p = Problem::new(obj, vec![ConstraintSpec::new(con, 0.5)]).unwrap();
        (
            p,
            ModelState::zeros(Architecture::linear(1, 1, false)).unwrap(),
        )
    }

    #[test]
    fn vacuous_constraint_keeps_mu_zero() {
        let (mut p, init) = toy();
        p.constraints[0].threshold = 1.5;
        let cfg = TrainConfig::new(
            20,
            0.5,
            InnerSolverConfig::gradient(3, None, OptimizerConfig::sgd(0.1)),
        );
        let out = train(&p, &cfg, &init).unwrap();
        assert!(out.trace.records.iter().all(|r| r.mu == vec![0.0]));
        assert_eq!(out.dual.mu(), &[0.0]);
    }

    #[test]
    fn alternating_equals_single_epoch_train() {
        let (p, init) = toy();
        let mut cfg = TrainConfig::new(
            30,
            0.3,
            InnerSolverConfig::gradient(1, None, OptimizerConfig::adam(0.05)),
        );
        cfg.seed = 4;
        let a = train(&p, &cfg, &init).unwrap();
        let b = train_alternating(&p, &cfg, &init).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn adam_dual_with_zero_slack_stays_at_zero() {
        let mut s = DualStepper::Adam(OptimizerState::new(OptimizerConfig::adam(0.1), 2).unwrap());
        let d = s.step(&DualState::zeros(2), &[0.0, 0.0]).unwrap();
        assert_eq!(d.mu(), &[0.0, 0.0]);
    }

    #[test]
    fn strided_trace_is_refused() {
        let (p, init) = toy();
        let cfg = TrainConfig::new(
            3,
            0.3,
            InnerSolverConfig::gradient(1, None, OptimizerConfig::sgd(0.1)),
        );
        let mut out = train(&p, &cfg, &init).unwrap();
        assert_eq!(randomized_solution(&out.trace).unwrap().len(), 3);
        out.trace.snapshot_stride = 2;
        assert!(randomized_solution(&out.trace).is_err());
    }

    #[test]
    fn iteration_index_attached_to_errors() {
        let d = Dataset::new("c", vec![Sample::new(vec![1.0], Label::Class(1))]).unwrap();
        let p = Problem::unconstrained(RiskTerm::new(LossSpec::zero_one(), d));
        let cfg = TrainConfig::new(
            2,
            0.1,
            InnerSolverConfig::gradient(1, None, OptimizerConfig::sgd(0.1)),
        );
        let init = ModelState::zeros(Architecture::logistic(1)).unwrap();
        match train(&p, &cfg, &init) {
            Err(Error::Iteration {
                iteration: 1,
                source,
            }) => {
                assert!(matches!(*source, Error::SurrogateRequired(_)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
