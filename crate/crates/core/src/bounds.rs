//! Uniform-convergence radii, multiplier bounds and the resulting
//! near-optimality gap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelState;
use crate::problem::Problem;

fn check_common(n: usize, delta: f64, bound: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(Error::input(format!(
            "loss bound must be nonnegative, got {bound}"
        )));
    }
    Ok(())
}

/// `B sqrt((1 + ln(4 (2N)^d / delta)) / N)`.
pub fn zeta_vc(n: usize, vc_dim: f64, delta: f64, bound: f64) -> Result<f64> {
    check_common(n, delta, bound)?;
    if !(vc_dim.is_finite() && vc_dim >= 0.0) {
        return Err(Error::input(format!(
            "VC dimension must be nonnegative, got {vc_dim}"
        )));
    }
    let n = n as f64;
    let log_term = 4f64.ln() + vc_dim * (2.0 * n).ln() - delta.ln();
    Ok(bound * ((1.0 + log_term) / n).sqrt())
}

/// `2 B R_N + B sqrt(ln(1/delta) / (2N))`.
pub fn zeta_rademacher(n: usize, rademacher: f64, delta: f64, bound: f64) -> Result<f64> {
    check_common(n, delta, bound)?;
    if !(rademacher.is_finite() && rademacher >= 0.0) {
        return Err(Error::input(format!(
            "Rademacher complexity must be nonnegative, got {rademacher}"
        )));
    }
    Ok(2.0 * bound * rademacher + bound * ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub estimate: f64,
    /// Monte-Carlo standard error of `estimate`.
    pub stderr: f64,
    pub draws: usize,
}

/// Monte-Carlo estimate of `E_sigma max_a (1/N) sigma . a` over the rows
/// `a` of `losses`, using `draws` uniform sign vectors.
pub fn empirical_rademacher(
    losses: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    let n = losses.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::input("loss matrix is empty"));
    }
    if losses.iter().any(|r| r.len() != n) {
        return Err(Error::input("loss matrix rows differ in length"));
    }
    if draws == 0 {
        return Err(Error::input("draws must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma = vec![0.0; n];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        for s in sigma.iter_mut() {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let mut best = f64::NEG_INFINITY;
        for row in losses {
            let dot: f64 = row.iter().zip(&sigma).map(|(a, s)| a * s).sum();
            best = best.max(dot / n as f64);
        }
        sum += best;
        sum_sq += best * best;
    }
    let k = draws as f64;
    let mean = sum / k;
    let var = if draws > 1 {
        ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        estimate: mean,
        stderr: (var / k).sqrt(),
        draws,
    })
}

/// `B / xi`, a cap on the norm of optimal multipliers.
pub fn multiplier_bound(bound: f64, xi: f64) -> Result<f64> {
    if !(bound > 0.0) {
        return Err(Error::input("loss bound must be positive"));
    }
    if !(xi > 0.0) {
        return Err(Error::input(format!(
            "feasibility margin must be positive, got {xi}"
        )));
    }
    Ok(bound / xi)
}

/// `min_i (c_i - risk_i)` at a model believed to be strictly feasible.
pub fn measure_xi(model: &ModelState, problem: &Problem) -> Result<f64> {
    if problem.m() == 0 {
        return Err(Error::input("problem has no constraints"));
    }
    let mut xi = f64::INFINITY;
    for c in &problem.constraints {
        xi = xi.min(c.threshold - c.term.risk(model)?);
    }
    if xi < 0.0 {
        return Err(Error::input(format!(
            "model violates a constraint by {}; it is not strictly feasible",
            -xi
        )));
    }
    Ok(xi)
}

/// `(1 + Delta) (M nu + max_i zeta_i)`.
pub fn gap_estimate(zeta: &[f64], big_delta: f64, lipschitz: f64, nu: f64) -> Result<f64> {
    for (name, v) in [("Delta", big_delta), ("M", lipschitz), ("nu", nu)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::input(format!("{name} must be nonnegative, got {v}")));
        }
    }
    if zeta.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(Error::input("zeta values must be nonnegative"));
    }
    let zeta_bar = zeta.iter().copied().fold(0.0, f64::max);
    Ok((1.0 + big_delta) * (lipschitz * nu + zeta_bar))
}

/// Inputs of a [`BoundsReport`]. `nu` is always an assumption supplied by
/// the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsInputs {
    pub bound: f64,
    pub lipschitz: f64,
    pub nu: f64,
    pub xi: f64,
    pub delta: f64,
    /// Objective radius first, then one per constraint.
    pub zeta: Vec<f64>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// Norm of the multipliers found by training, if any.
    #[serde(default)]
    pub observed_multiplier_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub bound: f64,
    pub lipschitz: f64,
    pub nu: f64,
    pub xi: f64,
    pub delta: f64,
    pub zeta: Vec<f64>,
    pub zeta_bar: f64,
    /// `B / xi`.
    pub delta_cap: f64,
    pub observed_multiplier_norm: Option<f64>,
    /// The multiplier norm used in the gap: the larger of the observed
    /// norm and `delta_cap`.
    pub delta_used: f64,
    pub gap_estimate: f64,
    /// `c_i + zeta_i` for each constraint.
    pub feasibility_margins: Vec<f64>,
    /// Quantities that are assumed rather than measured.
    pub assumed: Vec<String>,
}

pub fn gap_report(inputs: &BoundsInputs) -> Result<BoundsReport> {
    if inputs.zeta.is_empty() {
        return Err(Error::input("at least one zeta value is required"));
    }
    if !inputs.thresholds.is_empty() && inputs.thresholds.len() + 1 != inputs.zeta.len() {
        return Err(Error::input(
            "need one zeta per constraint plus one for the objective",
        ));
    }
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::input("delta must lie in (0, 1)"));
    }
    let delta_cap = multiplier_bound(inputs.bound, inputs.xi)?;
    let delta_used = inputs
        .observed_multiplier_norm
        .map_or(delta_cap, |o| o.max(delta_cap));
    let gap = gap_estimate(&inputs.zeta, delta_used, inputs.lipschitz, inputs.nu)?;
    let feasibility_margins = inputs
        .thresholds
        .iter()
        .zip(&inputs.zeta[1..])
        .map(|(c, z)| c + z)
        .collect();
    Ok(BoundsReport {
        bound: inputs.bound,
        lipschitz: inputs.lipschitz,
        nu: inputs.nu,
        xi: inputs.xi,
        delta: inputs.delta,
        zeta: inputs.zeta.clone(),
        zeta_bar: inputs.zeta.iter().copied().fold(0.0, f64::max),
        delta_cap,
        observed_multiplier_norm: inputs.observed_multiplier_norm,
        delta_used,
        gap_estimate: gap,
        feasibility_margins,
        assumed: vec![
            "nu (parametrization richness) is user supplied".into(),
            "Delta uses max(observed multiplier norm, B / xi)".into(),
        ],
    })
}
