//! Samples, datasets and the constrained learning problem.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::models::ModelState;
use crate::rate::SurrogateConfig;
use crate::robust::{self, AttackConfig};

/// A class index or a real-valued target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    /// Class index; integral non-negative real labels are accepted.
    pub fn class(&self) -> Result<usize> {
        match *self {
            Label::Class(k) => Ok(k),
            Label::Real(v) if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 => Ok(v as usize),
            Label::Real(v) => Err(Error::input(format!("label {v} is not a class index"))),
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Label::Class(k) => k as f64,
            Label::Real(v) => v,
        }
    }

    /// `{-1, +1}` encoding of binary classes; real labels pass through.
    pub fn signed(&self) -> f64 {
        match *self {
            Label::Class(0) => -1.0,
            Label::Class(_) => 1.0,
            Label::Real(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Sample { features, label }
    }
}

/// A named, nonempty, dimensionally homogeneous list of samples.
///
/// Subsets are views over the parent's storage, so conditional datasets
/// built by [`Dataset::subset`] do not copy samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    store: Arc<[Sample]>,
    view: Option<Arc<[usize]>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        let first = samples
            .first()
            .ok_or_else(|| Error::input(format!("dataset `{name}` is empty")))?;
        let dim = first.features.len();
        if let Some((i, _)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.features.len() != dim)
        {
            return Err(Error::input(format!(
                "dataset `{name}`: sample {i} has dimension {} (expected {dim})",
                samples[i].features.len()
            )));
        }
        Ok(Dataset {
            name,
            store: samples.into(),
            view: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        match &self.view {
            Some(v) => v.len(),
            None => self.store.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.get(0).features.len()
    }

    pub fn get(&self, i: usize) -> &Sample {
        match &self.view {
            Some(v) => &self.store[v[i]],
            None => &self.store[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Sample> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// A view over `indices` (positions within this dataset) sharing storage.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Dataset> {
        let name = name.into();
        if indices.is_empty() {
            return Err(Error::input(format!("dataset `{name}` is empty")));
        }
        let n = self.len();
        let mapped = indices
            .iter()
            .map(|&i| {
                if i >= n {
                    return Err(Error::input(format!(
                        "index {i} out of range for {n} samples"
                    )));
                }
                Ok(match &self.view {
                    Some(v) => v[i],
                    None => i,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            name,
            store: self.store.clone(),
            view: Some(mapped.into()),
        })
    }

    /// Whether two datasets share physical sample storage.
    pub fn shares_storage(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.store, &other.store)
    }

    pub fn to_vec(&self) -> Vec<Sample> {
        self.iter().cloned().collect()
    }

    pub fn concat(name: impl Into<String>, a: &Dataset, b: &Dataset) -> Result<Dataset> {
        let mut samples = a.to_vec();
        samples.extend(b.iter().cloned());
        Dataset::new(name, samples)
    }

    pub fn renamed(&self, name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            ..self.clone()
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.len() == other.len() && self.iter().eq(other.iter())
    }
}

/// Mean loss of `model` over `dataset`, accumulated left to right.
pub fn empirical_risk(model: &ModelState, loss: &LossSpec, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::input(format!(
            "dataset `{}` is empty",
            dataset.name()
        )));
    }
    if model.input_dim() != dataset.dim() {
        return Err(Error::input(format!(
            "model expects {} features, dataset `{}` has {}",
            model.input_dim(),
            dataset.name(),
            dataset.dim()
        )));
    }
    let mut total = 0.0;
    for s in dataset.iter() {
        total += loss.eval(&model.predict(&s.features)?, &s.label)?;
    }
    Ok(total / dataset.len() as f64)
}

/// One expectation appearing in the problem: a loss averaged over a
/// dataset, optionally minus the same loss averaged over a reference
/// dataset, optionally under an input attack.
#[derive(Debug, Clone)]
pub struct RiskTerm {
    /// The measured loss (used for slacks and reports).
    pub loss: LossSpec,
    /// Differentiable replacement used for gradients and attacks.
    pub primal_loss: Option<LossSpec>,
    pub dataset: Dataset,
    /// When set, the risk is `mean(dataset) - mean(reference)`.
    pub reference: Option<Dataset>,
    /// When set, samples are re-attacked against the current model at
    /// every evaluation.
    pub attack: Option<AttackConfig>,
}

impl RiskTerm {
    pub fn new(loss: LossSpec, dataset: Dataset) -> Self {
        RiskTerm {
            loss,
            primal_loss: None,
            dataset,
            reference: None,
            attack: None,
        }
    }

    pub fn with_reference(mut self, reference: Dataset) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_attack(mut self, attack: AttackConfig) -> Self {
        self.attack = Some(attack);
        self
    }

    pub fn with_primal_loss(mut self, loss: LossSpec) -> Self {
        self.primal_loss = Some(loss);
        self
    }

    /// The loss differentiated in primal steps.
    pub fn gradient_loss(&self) -> &LossSpec {
        self.primal_loss.as_ref().unwrap_or(&self.loss)
    }

    /// Bound on `|risk|`.
    pub fn risk_bound(&self) -> f64 {
        self.loss.bound
    }

    /// The dataset as seen by `model`: attacked when an attack is set.
    pub fn materialize(&self, model: &ModelState) -> Result<Dataset> {
        match &self.attack {
            None => Ok(self.dataset.clone()),
            Some(cfg) => robust::attack_dataset(model, self.gradient_loss(), &self.dataset, cfg),
        }
    }

    pub fn risk(&self, model: &ModelState) -> Result<f64> {
        self.risk_with(model, &self.loss)
    }

    pub fn risk_with(&self, model: &ModelState, loss: &LossSpec) -> Result<f64> {
        let data = self.materialize(model)?;
        let mut r = empirical_risk(model, loss, &data)?;
        if let Some(reference) = &self.reference {
            r -= empirical_risk(model, loss, reference)?;
        }
        Ok(r)
    }

    /// Adds `weight * grad_theta(risk over the given batches)` into `out`,
    /// using [`RiskTerm::gradient_loss`]. Batches index into `dataset` and
    /// `reference` respectively; `None` means the full set.
    pub fn accumulate_grad(
        &self,
        model: &ModelState,
        weight: f64,
        batch: Option<&[usize]>,
        reference_batch: Option<&[usize]>,
        out: &mut [f64],
    ) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let loss = *self.gradient_loss();
        if !loss.is_differentiable() {
            return Err(Error::SurrogateRequired(loss.kind.name()));
        }
        let all: Vec<usize>;
        let idx = match batch {
            Some(b) => b,
            None => {
                all = (0..self.dataset.len()).collect();
                &all
            }
        };
        if !idx.is_empty() {
            let scale = weight / idx.len() as f64;
            for &i in idx {
                let clean = self.dataset.get(i);
                let attacked;
                let s = match &self.attack {
                    Some(cfg) => {
                        attacked = robust::perturb_indexed(model, &loss, clean, cfg, i as u64)?;
                        &attacked
                    }
                    None => clean,
                };
                model.accumulate_loss_grad(&loss, s, scale, out)?;
            }
        }
        if let Some(reference) = &self.reference {
            let all_ref: Vec<usize>;
            let ridx = match reference_batch {
                Some(b) => b,
                None => {
                    all_ref = (0..reference.len()).collect();
                    &all_ref
                }
            };
            if !ridx.is_empty() {
                let scale = -weight / ridx.len() as f64;
                for &i in ridx {
                    model.accumulate_loss_grad(&loss, reference.get(i), scale, out)?;
                }
            }
        }
        Ok(())
    }
}

/// A constraint `risk(term) <= threshold`.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub term: RiskTerm,
    pub threshold: f64,
    /// Present on rate constraints that should be smoothed in primal steps.
    pub surrogate: Option<SurrogateConfig>,
}

impl ConstraintSpec {
    pub fn new(term: RiskTerm, threshold: f64) -> Self {
        ConstraintSpec {
            term,
            threshold,
            surrogate: None,
        }
    }

    pub fn with_surrogate(mut self, cfg: SurrogateConfig) -> Self {
        self.surrogate = Some(cfg);
        self
    }

    pub fn slack(&self, model: &ModelState) -> Result<f64> {
        Ok(self.term.risk(model)? - self.threshold)
    }

    /// Largest possible `|slack|` given the loss range.
    pub fn slack_bound(&self) -> f64 {
        let b = self.term.risk_bound();
        let c = self.threshold;
        if self.term.reference.is_some() {
            (b + c).abs().max((b - c).abs())
        } else {
            c.abs().max((b - c).abs())
        }
    }
}

/// Minimize the objective risk subject to every constraint.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: RiskTerm,
    pub constraints: Vec<ConstraintSpec>,
}

impl Problem {
    pub fn new(objective: RiskTerm, constraints: Vec<ConstraintSpec>) -> Result<Self> {
        let p = Problem {
            objective,
            constraints,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn unconstrained(objective: RiskTerm) -> Self {
        Problem {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.objective.dataset.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        let terms =
            std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.term));
        for t in terms {
            t.loss.validate()?;
            if let Some(l) = &t.primal_loss {
                l.validate()?;
            }
            for d in std::iter::once(&t.dataset).chain(t.reference.iter()) {
                if d.dim() != dim {
                    return Err(Error::input(format!(
                        "dataset `{}` has dimension {} but the objective data has {dim}",
                        d.name(),
                        d.dim()
                    )));
                }
            }
            if let Some(a) = &t.attack {
                a.validate()?;
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.threshold.is_finite() {
                return Err(Error::config(format!(
                    "constraint {i}: threshold must be finite"
                )));
            }
        }
        Ok(())
    }

    /// `sum_i slack_bound_i^2`, the constant in the ergodic
    /// complementary-slackness bound.
    pub fn slack_bound_sq_sum(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.slack_bound().powi(2))
            .sum()
    }

    /// Largest loss bound across objective and constraints.
    pub fn loss_bound(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.term.loss.bound)
            .fold(self.objective.loss.bound, f64::max)
    }
}
