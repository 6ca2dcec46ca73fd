//! Input attacks with an l-infinity budget and the adversarial constraints
//! built from them.
//!
//! PGD iterates signed-gradient ascent steps, each followed by projection
//! onto the epsilon ball around the clean input and then clamping to the
//! optional feature box. Restart 1 starts from the clean input; later
//! restarts start uniformly inside the ball. The clean input is itself a
//! candidate, so an attack never lowers the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::models::ModelState;
use crate::problem::{ConstraintSpec, Dataset, RiskTerm, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    /// Valid `(low, high)` range per feature.
    #[serde(default)]
    pub clamp_box: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    /// Single signed step of size `epsilon`.
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            restarts: 1,
            clamp_box: None,
            seed: 0,
        }
    }

    /// Cheap attack used inside training: 5 steps of `epsilon / 3`, no restarts.
    pub fn pgd_train(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            epsilon,
            steps: 5,
            step_size: epsilon / 3.0,
            restarts: 1,
            clamp_box: None,
            seed: 0,
        }
    }

    /// Strong evaluation attack: 50 steps of `epsilon / 30`, worst of 10 restarts.
    pub fn pgd_eval(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            epsilon,
            steps: 50,
            step_size: epsilon / 30.0,
            restarts: 10,
            clamp_box: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_box(mut self, clamp_box: Vec<(f64, f64)>) -> Self {
        self.clamp_box = Some(clamp_box);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("attack epsilon must be nonnegative"));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::config("attack steps and restarts must be positive"));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::config("attack step size must be nonnegative"));
        }
        if self.epsilon > 0.0 && self.step_size == 0.0 {
            return Err(Error::config("attack step size must be positive"));
        }
        if self.kind == AttackKind::Fgsm
            && (self.steps != 1 || self.step_size != self.epsilon || self.restarts != 1)
        {
            return Err(Error::config(
                "fgsm requires steps = 1, restarts = 1 and step_size = epsilon",
            ));
        }
        if let Some(b) = &self.clamp_box {
            if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::config("clamp box needs low <= high"));
            }
        }
        Ok(())
    }
}

fn project(x: &mut [f64], clean: &[f64], eps: f64, clamp_box: Option<&[(f64, f64)]>) {
    for (i, (xi, ci)) in x.iter_mut().zip(clean).enumerate() {
        *xi = xi.clamp(ci - eps, ci + eps);
        if let Some((lo, hi)) = clamp_box.and_then(|b| b.get(i)) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

fn signum(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Attacks one sample, drawing restart noise from `cfg.seed`.
pub fn perturb(
    model: &ModelState,
    loss: &LossSpec,
    sample: &Sample,
    cfg: &AttackConfig,
) -> Result<Sample> {
    perturb_seeded(model, loss, sample, cfg, cfg.seed)
}

/// Attacks sample number `index` of a dataset; the restart noise is seeded
/// with `cfg.seed ^ index`.
pub fn perturb_indexed(
    model: &ModelState,
    loss: &LossSpec,
    sample: &Sample,
    cfg: &AttackConfig,
    index: u64,
) -> Result<Sample> {
    perturb_seeded(model, loss, sample, cfg, cfg.seed ^ index)
}

fn perturb_seeded(
    model: &ModelState,
    loss: &LossSpec,
    sample: &Sample,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Sample> {
    if !loss.is_differentiable() {
        return Err(Error::SurrogateRequired(loss.kind.name()));
    }
    let clean = &sample.features;
    let eps = cfg.epsilon;
    let clamp_box = cfg.clamp_box.as_deref();
    if let Some(b) = clamp_box {
        if b.len() != clean.len() {
            return Err(Error::input(format!(
                "clamp box has {} ranges for {} features",
                b.len(),
                clean.len()
            )));
        }
    }
    let eval = |x: &[f64]| -> Result<f64> { loss.eval(&model.predict(x)?, &sample.label) };
    let mut best = clean.clone();
    let mut best_loss = eval(clean)?;
    if eps == 0.0 {
        return Ok(sample.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = sample.clone();
    for restart in 0..cfg.restarts {
        let mut x = clean.clone();
        if restart > 0 {
            for xi in x.iter_mut() {
                *xi += rng.random_range(-eps..=eps);
            }
        }
        project(&mut x, clean, eps, clamp_box);
        for _ in 0..cfg.steps {
            probe.features.clone_from(&x);
            let g = model.input_grad(loss, &probe)?;
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi += cfg.step_size * signum(*gi);
            }
            project(&mut x, clean, eps, clamp_box);
            debug_assert!(x
                .iter()
                .zip(clean)
                .all(|(a, c)| (a - c).abs() <= eps * (1.0 + 1e-12)));
        }
        let l = eval(&x)?;
        if l > best_loss {
            best_loss = l;
            best = x;
        }
    }
    Ok(Sample::new(best, sample.label))
}

/// Every sample of `data` attacked against `model`.
pub fn attack_dataset(
    model: &ModelState,
    loss: &LossSpec,
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<Dataset> {
    let samples = data
        .iter()
        .enumerate()
        .map(|(i, s)| perturb_indexed(model, loss, s, cfg, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("{}@adv", data.name()), samples)
}

/// The constraint `E_attacked[loss] <= threshold_c`, where samples of
/// `base` are regenerated against the current model at every evaluation.
pub fn adversarial_constraint(
    base: Dataset,
    loss: LossSpec,
    threshold_c: f64,
    cfg: AttackConfig,
) -> Result<ConstraintSpec> {
    if !threshold_c.is_finite() {
        return Err(Error::config("threshold must be finite"));
    }
    cfg.validate()?;
    Ok(ConstraintSpec::new(
        RiskTerm::new(loss, base).with_attack(cfg),
        threshold_c,
    ))
}
