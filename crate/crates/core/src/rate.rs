//! Rate constraints: indicator losses, their sigmoid smoothing for primal
//! steps, and margin diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{logistic, LossKind, LossSpec};
use crate::models::ModelState;
use crate::problem::Problem;

/// Smoothing of a rate constraint `1(z - shift >= 0)` by
/// `sigmoid(slope * (z - shift))` in primal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default = "default_enabled")]
    pub enabled_in_primal: bool,
}

fn default_slope() -> f64 {
    8.0
}
fn default_shift() -> f64 {
    0.5
}
fn default_enabled() -> bool {
    true
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            slope: default_slope(),
            shift: default_shift(),
            enabled_in_primal: default_enabled(),
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope >= 1.0 && self.slope.is_finite()) {
            return Err(Error::config(format!(
                "surrogate slope must be >= 1, got {}",
                self.slope
            )));
        }
        if !self.shift.is_finite() {
            return Err(Error::config("surrogate shift must be finite"));
        }
        Ok(())
    }
}

/// `1` when `g >= 0`, else `0`.
pub fn indicator_rate_loss(g: f64) -> f64 {
    if g >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sigmoid_surrogate(x: f64, slope: f64) -> Result<f64> {
    if !(slope >= 1.0) {
        return Err(Error::config(format!(
            "surrogate slope must be >= 1, got {slope}"
        )));
    }
    Ok(logistic(slope * x))
}

/// Copy of `problem` in which every rate-indicator constraint is
/// differentiated through its sigmoid surrogate. Thresholds and the
/// measured (indicator) losses are untouched, so slacks are unchanged.
pub fn build_surrogate_lagrangian(problem: &Problem) -> Result<Problem> {
    let mut out = problem.clone();
    for (i, c) in out.constraints.iter_mut().enumerate() {
        if !matches!(c.term.loss.kind, LossKind::RateIndicator { .. }) {
            continue;
        }
        let cfg = c.surrogate.ok_or_else(|| {
            Error::config(format!("constraint {i}: rate constraint needs a surrogate"))
        })?;
        cfg.validate()?;
        if cfg.enabled_in_primal {
            c.term.primal_loss = Some(LossSpec::rate_sigmoid(cfg.slope, cfg.shift)?);
        }
    }
    Ok(out)
}

/// Worst-case Lagrangian distortion from smoothing with margin `tau`:
/// `2 ||mu||_1 (1 - sigmoid(slope * tau))`.
pub fn surrogate_gap_bound(mu: &[f64], tau: f64, slope: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::input("margin must be nonnegative"));
    }
    let l1: f64 = mu.iter().map(|m| m.abs()).sum();
    Ok(2.0 * l1 * (1.0 - sigmoid_surrogate(tau, slope)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Smallest `|z - shift|` over all rate-constraint samples.
    pub min_abs_margin: f64,
    /// `(constraint index, sample index)` of samples with margin below the
    /// requested minimum. Reference samples are indexed after the
    /// constraint's own samples.
    pub violating: Vec<(usize, usize)>,
}

pub fn margin_check(model: &ModelState, problem: &Problem, tau_min: f64) -> Result<MarginReport> {
    let mut min_abs = f64::INFINITY;
    let mut violating = Vec::new();
    let mut seen = false;
    for (ci, c) in problem.constraints.iter().enumerate() {
        let loss = &c.term.loss;
        if !matches!(loss.kind, LossKind::RateIndicator { .. }) {
            continue;
        }
        seen = true;
        let samples = c
            .term
            .dataset
            .iter()
            .chain(c.term.reference.iter().flat_map(|r| r.iter()));
        for (si, s) in samples.enumerate() {
            let g = loss
                .rate_argument(&model.predict(&s.features)?)
                .ok_or_else(|| Error::input("rate loss needs a single output"))?;
            let margin = g.abs();
            min_abs = min_abs.min(margin);
            if margin < tau_min {
                violating.push((ci, si));
            }
        }
    }
    if !seen {
        return Err(Error::input("problem has no rate constraints"));
    }
    Ok(MarginReport {
        min_abs_margin: min_abs,
        violating,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::problem::{ConstraintSpec, Dataset, Label, RiskTerm, Sample};

    #[test]
    fn indicator_boundary_counts() {
        assert_eq!(indicator_rate_loss(0.0), 1.0);
        assert_eq!(indicator_rate_loss(-0.3), 0.0);
        assert_eq!(indicator_rate_loss(5.0), 1.0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_surrogate(0.0, 3.0).unwrap(), 0.5);
        assert!((sigmoid_surrogate(0.25, 8.0).unwrap() - 0.8807970779778823).abs() < 1e-15);
        assert!(sigmoid_surrogate(0.1, 0.5).is_err());
    }

    #[test]
    fn gap_bound_substitution() {
        assert_eq!(surrogate_gap_bound(&[0.0, 0.0], 0.3, 8.0).unwrap(), 0.0);
        // sigmoid(a tau) = 0.9 when a tau = ln 9
        let b = surrogate_gap_bound(&[1.5, 0.5], 9f64.ln(), 1.0).unwrap();
        assert!((b - 0.4).abs() < 1e-12);
    }

    fn one_feature(values: &[f64]) -> Dataset {
        let s = values
            .iter()
            .map(|v| Sample::new(vec![*v], Label::Class(1)))
            .collect();
        Dataset::new("d", s).unwrap()
    }

    fn identity() -> ModelState {
        ModelState::new(Architecture::linear(1, 1, false), vec![1.0]).unwrap()
    }

    #[test]
    fn margin_manual_scan() {
        let d = one_feature(&[0.1, 0.45, 0.9, 0.5, 0.62]);
        let c = ConstraintSpec::new(
            RiskTerm::new(LossSpec::rate_indicator(0.5).unwrap(), d.clone()),
            0.5,
        );
        let p = Problem::new(RiskTerm::new(LossSpec::squared(1.0).unwrap(), d), vec![c]).unwrap();
        let r = margin_check(&identity(), &p, 0.1).unwrap();
        assert_eq!(r.min_abs_margin, 0.0);
        assert_eq!(r.violating, vec![(0, 1), (0, 3)]);
    }

    #[test]
    fn surrogate_replaces_only_rate_constraints() {
        let d = one_feature(&[0.2, 0.7]);
        let obj = RiskTerm::new(LossSpec::squared(1.0).unwrap(), d.clone());
        let plain = Problem::new(obj.clone(), vec![]).unwrap();
        let out = build_surrogate_lagrangian(&plain).unwrap();
        assert!(out.objective.primal_loss.is_none());

        let rate = ConstraintSpec::new(
            RiskTerm::new(LossSpec::rate_indicator(0.5).unwrap(), d.clone()),
            0.4,
        );
        let p = Problem::new(obj, vec![rate.clone()]).unwrap();
        assert!(matches!(
            build_surrogate_lagrangian(&p),
            Err(Error::Config(_))
        ));

        let p = Problem::new(
            p.objective,
            vec![rate.with_surrogate(SurrogateConfig::default())],
        )
        .unwrap();
        let s = build_surrogate_lagrangian(&p).unwrap();
        let m = identity();
        assert_eq!(
            s.constraints[0].slack(&m).unwrap(),
            p.constraints[0].slack(&m).unwrap()
        );
        let f = one_feature(&[0.5]);
        let sig = s.constraints[0].term.gradient_loss();
        assert_eq!(sig.eval(&[0.5], &f.get(0).label).unwrap(), 0.5);
    }
}
