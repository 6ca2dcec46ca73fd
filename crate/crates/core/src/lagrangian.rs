//! The empirical Lagrangian, constraint slacks, and approximate
//! minimization of the Lagrangian over the parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::models::{Architecture, ModelState, OptimizerConfig, OptimizerState};
use crate::problem::Problem;
use crate::rate;

/// Nonnegative Lagrange multipliers, one per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualState {
    mu: Vec<f64>,
}

impl DualState {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if let Some(v) = mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!(
                "multiplier {v} is not finite and nonnegative"
            )));
        }
        Ok(DualState { mu })
    }

    pub fn zeros(m: usize) -> Self {
        DualState { mu: vec![0.0; m] }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mu
    }
}

/// Objective risk and constraint slacks of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub slacks: Vec<f64>,
}

impl Evaluation {
    /// `objective + sum_i mu_i * slack_i`, accumulated in constraint order.
    pub fn lagrangian(&self, mu: &[f64]) -> f64 {
        let mut value = self.objective;
        for (m, s) in mu.iter().zip(&self.slacks) {
            value += m * s;
        }
        value
    }
}

pub fn evaluate(model: &ModelState, problem: &Problem) -> Result<Evaluation> {
    Ok(Evaluation {
        objective: problem.objective.risk(model)?,
        slacks: slacks(model, problem)?,
    })
}

/// `risk_i - c_i` for every constraint.
pub fn slacks(model: &ModelState, problem: &Problem) -> Result<Vec<f64>> {
    problem.constraints.iter().map(|c| c.slack(model)).collect()
}

fn check_len(dual: &[f64], problem: &Problem) -> Result<()> {
    if dual.len() != problem.m() {
        return Err(Error::input(format!(
            "{} multipliers for {} constraints",
            dual.len(),
            problem.m()
        )));
    }
    Ok(())
}

pub fn empirical_lagrangian(
    model: &ModelState,
    dual: &DualState,
    problem: &Problem,
) -> Result<f64> {
    check_len(dual.mu(), problem)?;
    Ok(evaluate(model, problem)?.lagrangian(dual.mu()))
}

/// How the Lagrangian is minimized over the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerMethod {
    /// First-order descent. `batch_size = None` means full batch.
    Gradient {
        epochs: usize,
        #[serde(default)]
        batch_size: Option<usize>,
        optimizer: OptimizerConfig,
    },
    /// Exact minimization over an explicit list of parameter vectors.
    Enumeration { candidates: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSolverConfig {
    pub method: InnerMethod,
    /// Accuracy the caller hopes for. Not certified for gradient solves.
    #[serde(default)]
    pub target_rho: f64,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_warm_start() -> bool {
    true
}

impl InnerSolverConfig {
    pub fn gradient(epochs: usize, batch_size: Option<usize>, optimizer: OptimizerConfig) -> Self {
        InnerSolverConfig {
            method: InnerMethod::Gradient {
                epochs,
                batch_size,
                optimizer,
            },
            target_rho: 0.0,
            warm_start: true,
        }
    }

    pub fn enumeration(candidates: Vec<Vec<f64>>) -> Self {
        InnerSolverConfig {
            method: InnerMethod::Enumeration { candidates },
            target_rho: 0.0,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_rho >= 0.0) {
            return Err(Error::config("target_rho must be nonnegative"));
        }
        match &self.method {
            InnerMethod::Gradient {
                epochs,
                batch_size,
                optimizer,
            } => {
                if *epochs == 0 {
                    return Err(Error::config("inner epochs must be at least 1"));
                }
                if *batch_size == Some(0) {
                    return Err(Error::config("batch size must be positive"));
                }
                optimizer.validate()
            }
            InnerMethod::Enumeration { candidates } => {
                if candidates.is_empty() {
                    return Err(Error::config("candidate list is empty"));
                }
                Ok(())
            }
        }
    }
}

/// Objective risks and slacks of a fixed candidate list, so the Lagrangian
/// at any multiplier is an inner product.
#[derive(Debug, Clone)]
pub struct EnumerationTable {
    pub arch: Architecture,
    pub candidates: Vec<Vec<f64>>,
    pub evaluations: Vec<Evaluation>,
}

impl EnumerationTable {
    pub fn new(problem: &Problem, arch: &Architecture, candidates: &[Vec<f64>]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::config("candidate list is empty"));
        }
        let evaluations = candidates
            .iter()
            .map(|theta| evaluate(&ModelState::new(arch.clone(), theta.clone())?, problem))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnumerationTable {
            arch: arch.clone(),
            candidates: candidates.to_vec(),
            evaluations,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn model(&self, index: usize) -> ModelState {
        ModelState {
            arch: self.arch.clone(),
            params: self.candidates[index].clone(),
        }
    }

    /// Index and value of the Lagrangian minimizer; ties go to the lowest index.
    pub fn argmin(&self, mu: &[f64]) -> (usize, f64) {
        let mut best = (0, self.evaluations[0].lagrangian(mu));
        for (k, e) in self.evaluations.iter().enumerate().skip(1) {
            let v = e.lagrangian(mu);
            if v < best.1 {
                best = (k, v);
            }
        }
        best
    }

    /// The dual function at `mu`.
    pub fn dual_value(&self, mu: &[f64]) -> f64 {
        self.argmin(mu).1
    }
}

/// Diagnostics of one inner solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    /// Candidate index chosen by an enumeration solve.
    pub candidate: Option<usize>,
    /// Lagrangian value at the start of a gradient solve, when measured.
    pub start_value: Option<f64>,
    /// Best end-of-epoch Lagrangian value, when measured.
    pub best_value: Option<f64>,
}

/// A reusable inner minimizer. Holds the optimizer moments and the RNG
/// used for mini-batch shuffling, so consecutive solves within one run
/// continue where the previous one stopped when warm starting.
pub struct InnerSolver {
    config: InnerSolverConfig,
    /// The problem as differentiated: rate constraints carry surrogates.
    primal: Problem,
    /// The problem as measured.
    measured: Problem,
    init: ModelState,
    rng: ChaCha8Rng,
    optimizer: Option<OptimizerState>,
    table: Option<EnumerationTable>,
}

impl InnerSolver {
    pub fn new(
        problem: &Problem,
        config: &InnerSolverConfig,
        init: &ModelState,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        if init.input_dim() != problem.feature_dim() {
            return Err(Error::input(format!(
                "model expects {} features, problem has {}",
                init.input_dim(),
                problem.feature_dim()
            )));
        }
        let mut table = None;
        let primal = match &config.method {
            InnerMethod::Gradient { .. } => {
                let has_rate = problem
                    .constraints
                    .iter()
                    .any(|c| matches!(c.term.loss.kind, LossKind::RateIndicator { .. }));
                if has_rate {
                    rate::build_surrogate_lagrangian(problem)?
                } else {
                    problem.clone()
                }
            }
            InnerMethod::Enumeration { candidates } => {
                if let Some(c) = candidates.iter().find(|c| c.len() != init.params.len()) {
                    return Err(Error::input(format!(
                        "candidate has {} parameters, model has {}",
                        c.len(),
                        init.params.len()
                    )));
                }
                table = Some(EnumerationTable::new(problem, &init.arch, candidates)?);
                problem.clone()
            }
        };
        Ok(InnerSolver {
            config: config.clone(),
            primal,
            measured: problem.clone(),
            init: init.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            optimizer: None,
            table,
        })
    }

    pub fn table(&self) -> Option<&EnumerationTable> {
        self.table.as_ref()
    }

    /// Approximately minimizes the Lagrangian at `mu`, starting from
    /// `current` when warm starting and from the initial model otherwise.
    pub fn solve(&mut self, current: &ModelState, mu: &[f64]) -> Result<(ModelState, InnerReport)> {
        check_len(mu, &self.measured)?;
        if let Some(table) = &self.table {
            let (k, v) = table.argmin(mu);
            return Ok((
                table.model(k),
                InnerReport {
                    candidate: Some(k),
                    start_value: None,
                    best_value: Some(v),
                },
            ));
        }
        let InnerMethod::Gradient {
            epochs,
            batch_size,
            optimizer,
        } = self.config.method.clone()
        else {
            unreachable!("enumeration handled above")
        };
        let mut model = if self.config.warm_start {
            current.clone()
        } else {
            self.optimizer = None;
            self.init.clone()
        };
        let opt = match &mut self.optimizer {
            Some(o) => o,
            slot => slot.insert(OptimizerState::new(optimizer, model.params.len())?),
        };

        let n0 = self.primal.objective.dataset.len();
        let batches = batch_size.map_or(1, |b| n0.div_ceil(b.min(n0)));
        let mut best: Option<(f64, ModelState)> = None;
        let mut start_value = None;
        if epochs > 1 {
            start_value = Some(evaluate(&model, &self.measured)?.lagrangian(mu));
        }
        let mut grad = vec![0.0; model.params.len()];
        for _ in 0..epochs {
            let plan = BatchPlan::new(&self.primal, batches, &mut self.rng);
            for j in 0..batches {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let obj = &self.primal.objective;
                obj.accumulate_grad(
                    &model,
                    1.0,
                    plan.objective(j),
                    plan.objective_ref(j),
                    &mut grad,
                )?;
                for (i, c) in self.primal.constraints.iter().enumerate() {
                    c.term.accumulate_grad(
                        &model,
                        mu[i],
                        plan.constraint(i, j),
                        plan.constraint_ref(i, j),
                        &mut grad,
                    )?;
                }
                opt.step(&mut model, &grad)?;
            }
            if epochs > 1 {
                let v = evaluate(&model, &self.measured)?.lagrangian(mu);
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                }
            }
        }
        let (best_value, model) = match best {
            Some((v, m)) => (Some(v), m),
            None => (None, model),
        };
        Ok((
            model,
            InnerReport {
                candidate: None,
                start_value,
                best_value,
            },
        ))
    }
}

/// Per-epoch mini-batch assignment. Every dataset is split into the same
/// number of batches as the objective dataset; full-batch plans use `None`
/// (all samples, in order).
struct BatchPlan {
    batches: usize,
    objective: Batches,
    objective_ref: Batches,
    constraints: Vec<(Batches, Batches)>,
}

type Batches = Option<Vec<Vec<usize>>>;

fn split(n: usize, batches: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    (0..batches)
        .map(|j| {
            let (lo, hi) = (j * n / batches, (j + 1) * n / batches);
            if lo < hi {
                perm[lo..hi].to_vec()
            } else {
                vec![perm[lo % n]]
            }
        })
        .collect()
}

impl BatchPlan {
    fn new(problem: &Problem, batches: usize, rng: &mut ChaCha8Rng) -> Self {
        if batches <= 1 {
            return BatchPlan {
                batches,
                objective: None,
                objective_ref: None,
                constraints: vec![(None, None); problem.m()],
            };
        }
        let mut parts = |term: &crate::problem::RiskTerm| {
            let main = split(term.dataset.len(), batches, rng);
            let reference = term
                .reference
                .as_ref()
                .map(|r| split(r.len(), batches, rng));
            (Some(main), reference)
        };
        let (objective, objective_ref) = parts(&problem.objective);
        let constraints = problem.constraints.iter().map(|c| parts(&c.term)).collect();
        BatchPlan {
            batches,
            objective,
            objective_ref,
            constraints,
        }
    }

    fn pick(parts: &Batches, j: usize) -> Option<&[usize]> {
        parts.as_ref().map(|p| p[j].as_slice())
    }

    fn objective(&self, j: usize) -> Option<&[usize]> {
        debug_assert!(j < self.batches);
        Self::pick(&self.objective, j)
    }

    fn objective_ref(&self, j: usize) -> Option<&[usize]> {
        Self::pick(&self.objective_ref, j)
    }

    fn constraint(&self, i: usize, j: usize) -> Option<&[usize]> {
        Self::pick(&self.constraints[i].0, j)
    }

    fn constraint_ref(&self, i: usize, j: usize) -> Option<&[usize]> {
        Self::pick(&self.constraints[i].1, j)
    }
}

/// Value of the empirical dual function at `dual` and the model attaining it.
pub fn dual_function(
    dual: &DualState,
    problem: &Problem,
    solver: &InnerSolverConfig,
    init: &ModelState,
) -> Result<(f64, ModelState)> {
    let mut inner = InnerSolver::new(problem, solver, init, 0)?;
    let (model, report) = inner.solve(init, dual.mu())?;
    let value = match report.candidate.and(report.best_value) {
        Some(v) => v,
        None => empirical_lagrangian(&model, dual, problem)?,
    };
    Ok((value, model))
}
