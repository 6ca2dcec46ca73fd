//! Brute-force reference solvers over finite candidate sets, and a small
//! two-parameter problem on which empirical constrained risk minimization
//! fails almost surely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::EnumerationTable;
use crate::loss::LossSpec;
use crate::models::{Architecture, ModelState};
use crate::problem::{ConstraintSpec, Dataset, Label, Problem, RiskTerm, Sample};

/// A problem together with an explicit finite parameter set.
#[derive(Debug, Clone)]
pub struct EnumerableProblem {
    pub problem: Problem,
    pub arch: Architecture,
    pub candidates: Vec<Vec<f64>>,
    /// Constraints count as met when `risk <= c + xi_relax`.
    pub xi_relax: f64,
}

impl EnumerableProblem {
    pub fn new(problem: Problem, arch: Architecture, candidates: Vec<Vec<f64>>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::input("candidate list is empty"));
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != arch.param_count()) {
            return Err(Error::input(format!(
                "candidate has {} parameters, architecture has {}",
                c.len(),
                arch.param_count()
            )));
        }
        Ok(EnumerableProblem {
            problem,
            arch,
            candidates,
            xi_relax: 0.0,
        })
    }

    pub fn with_relaxation(mut self, xi_relax: f64) -> Result<Self> {
        if !(xi_relax >= 0.0) {
            return Err(Error::input("relaxation must be nonnegative"));
        }
        self.xi_relax = xi_relax;
        Ok(self)
    }

    pub fn table(&self) -> Result<EnumerationTable> {
        EnumerationTable::new(&self.problem, &self.arch, &self.candidates)
    }
}

/// Every point of an axis-aligned grid; each axis is `(low, high, points)`.
pub fn grid_candidates(axes: &[(f64, f64, usize)]) -> Result<Vec<Vec<f64>>> {
    if axes.iter().any(|(lo, hi, k)| *k == 0 || !(lo <= hi)) {
        return Err(Error::input(
            "grid axes need low <= high and at least one point",
        ));
    }
    let mut out = vec![Vec::new()];
    for &(lo, hi, k) in axes {
        let values: Vec<f64> = (0..k)
            .map(|i| {
                if k == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (k - 1) as f64
                }
            })
            .collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EcrmOutcome {
    Solved {
        index: usize,
        theta: Vec<f64>,
        value: f64,
    },
    Infeasible,
}

impl EcrmOutcome {
    pub fn value(&self) -> f64 {
        match self {
            EcrmOutcome::Solved { value, .. } => *value,
            EcrmOutcome::Infeasible => f64::INFINITY,
        }
    }
}

/// The feasible candidate of least empirical objective; ties go to the
/// lowest index.
pub fn ecrm_enumerate(ep: &EnumerableProblem) -> Result<EcrmOutcome> {
    Ok(ecrm_from_table(&ep.table()?, ep.xi_relax))
}

pub fn ecrm_from_table(table: &EnumerationTable, xi_relax: f64) -> EcrmOutcome {
    let mut best: Option<(usize, f64)> = None;
    for (k, e) in table.evaluations.iter().enumerate() {
        if e.slacks.iter().all(|s| *s <= xi_relax) && best.is_none_or(|(_, v)| e.objective < v) {
            best = Some((k, e.objective));
        }
    }
    match best {
        Some((index, value)) => EcrmOutcome::Solved {
            index,
            theta: table.candidates[index].clone(),
            value,
        },
        None => EcrmOutcome::Infeasible,
    }
}

/// Multiplier grid `[0, max]^m` with `points` values per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuGrid {
    pub max: f64,
    pub points: usize,
    /// Polish the best grid point by coordinate-wise ternary search.
    pub refine: bool,
}

impl MuGrid {
    /// 200 points per axis on `[0, 2 B / xi]`, or on `[0, 50]` when no
    /// feasibility margin is known.
    pub fn default_for(bound: f64, xi: Option<f64>) -> Self {
        let max = match xi {
            Some(x) if x > 0.0 => 2.0 * bound / x,
            _ => 50.0,
        };
        MuGrid {
            max,
            points: 200,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualOutcome {
    pub d_hat: f64,
    pub mu_star: Vec<f64>,
    pub theta_index: usize,
    pub theta: Vec<f64>,
    /// The best grid point lies on the upper edge of the grid, so the grid
    /// may be too small.
    pub boundary_hit: bool,
}

/// Maximizes the exact enumeration dual function over a multiplier grid.
pub fn dual_enumerate(ep: &EnumerableProblem, grid: &MuGrid) -> Result<DualOutcome> {
    dual_from_table(&ep.table()?, ep.problem.m(), grid)
}

pub fn dual_from_table(table: &EnumerationTable, m: usize, grid: &MuGrid) -> Result<DualOutcome> {
    if grid.points == 0 || !(grid.max >= 0.0 && grid.max.is_finite()) {
        return Err(Error::input(
            "multiplier grid needs points >= 1 and a finite max",
        ));
    }
    let axis = |i: usize| {
        if grid.points == 1 {
            0.0
        } else {
            grid.max * i as f64 / (grid.points - 1) as f64
        }
    };
    let total = (grid.points as u128).pow(m as u32);
    if total > 1 << 32 {
        return Err(Error::input("multiplier grid is too large"));
    }
    let mut idx = vec![0usize; m];
    let mut mu = vec![0.0; m];
    let mut best_mu = mu.clone();
    let mut best_idx = idx.clone();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..total {
        for (v, i) in mu.iter_mut().zip(&idx) {
            *v = axis(*i);
        }
        let d = table.dual_value(&mu);
        if d > best {
            best = d;
            best_mu.clone_from(&mu);
            best_idx.clone_from(&idx);
        }
        for i in idx.iter_mut().rev() {
            *i += 1;
            if *i < grid.points {
                break;
            }
            *i = 0;
        }
    }
    let boundary_hit = grid.points > 1 && best_idx.iter().any(|&i| i == grid.points - 1);
    if grid.refine && m > 0 && grid.points > 1 {
        let h = grid.max / (grid.points - 1) as f64;
        for _ in 0..4 {
            for k in 0..m {
                let centre = best_mu[k];
                let (mut lo, mut hi) = ((centre - h).max(0.0), (centre + h).min(grid.max));
                let mut probe = best_mu.clone();
                let at = |x: f64, probe: &mut Vec<f64>| {
                    probe[k] = x;
                    table.dual_value(probe)
                };
                for _ in 0..200 {
                    let a = lo + (hi - lo) / 3.0;
                    let b = hi - (hi - lo) / 3.0;
                    if at(a, &mut probe) < at(b, &mut probe) {
                        lo = a;
                    } else {
                        hi = b;
                    }
                }
                let x = 0.5 * (lo + hi);
                let d = at(x, &mut probe);
                if d > best {
                    best = d;
                    best_mu[k] = x;
                }
            }
        }
    }
    let (theta_index, d_hat) = table.argmin(&best_mu);
    debug_assert_eq!(d_hat, best);
    Ok(DualOutcome {
        d_hat,
        mu_star: best_mu,
        theta_index,
        theta: table.candidates[theta_index].clone(),
        boundary_hit,
    })
}

/// Samples of the three coupled distributions, drawn index by index.
#[derive(Debug, Clone)]
pub struct Example1Draw {
    pub tau: Vec<f64>,
    pub alpha: Vec<f64>,
    pub objective: Dataset,
    pub first: Dataset,
    pub second: Dataset,
}

impl Example1Draw {
    pub fn tau_bar(&self) -> f64 {
        self.tau.iter().sum::<f64>() / self.tau.len() as f64
    }
}

/// `n` samples from each distribution. Per index a fresh `tau ~ U[-1/2, 1/2]`
/// and `alpha ~ U[0, 1/4]` are drawn; `tau` is shared by the three samples
/// of that index. The objective sample is `([tau, -tau], -1)` or
/// `([0, alpha], 1)` with probability 1/2 each, the constraint samples are
/// `([-1, tau], 1)` and `([-tau, 1], 1)`.
pub fn example1_sample(n: usize, seed: u64) -> Result<Example1Draw> {
    if n == 0 {
        return Err(Error::input("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tau, mut alpha) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut d0, mut d1, mut d2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let t: f64 = rng.random_range(-0.5..=0.5);
        let a: f64 = rng.random_range(0.0..=0.25);
        let first_branch: bool = rng.random();
        d0.push(if first_branch {
            Sample::new(vec![t, -t], Label::Real(-1.0))
        } else {
            Sample::new(vec![0.0, a], Label::Real(1.0))
        });
        d1.push(Sample::new(vec![-1.0, t], Label::Real(1.0)));
        d2.push(Sample::new(vec![-t, 1.0], Label::Real(1.0)));
        tau.push(t);
        alpha.push(a);
    }
    Ok(Example1Draw {
        tau,
        alpha,
        objective: Dataset::new("objective", d0)?,
        first: Dataset::new("first", d1)?,
        second: Dataset::new("second", d2)?,
    })
}

/// Population objective `E|y theta.x| = |theta1 - theta2| / 8 + |theta2| / 16`.
pub fn example1_population_objective(theta: [f64; 2]) -> f64 {
    (theta[0] - theta[1]).abs() / 8.0 + theta[1].abs() / 16.0
}

/// Loss range used for every term of the example problem.
const EXAMPLE1_BOUND: f64 = 4.0;
/// Scores are shifted by this offset so they stay inside `[0, B]`.
const EXAMPLE1_OFFSET: f64 = 2.0;

/// Minimize `E|y theta.x|` subject to `E_1[y theta.x] <= -1` and
/// `E_2[y theta.x] <= 1`. Scores are shifted by a constant (and the
/// thresholds with them) to keep losses nonnegative; slacks are unchanged.
pub fn example1_problem(draw: &Example1Draw) -> Result<Problem> {
    let score = LossSpec::linear_score(1.0, EXAMPLE1_OFFSET, EXAMPLE1_BOUND)?;
    let objective = RiskTerm::new(
        LossSpec::absolute_score(EXAMPLE1_BOUND)?,
        draw.objective.clone(),
    );
    Problem::new(
        objective,
        vec![
            ConstraintSpec::new(
                RiskTerm::new(score, draw.first.clone()),
                -1.0 + EXAMPLE1_OFFSET,
            ),
            ConstraintSpec::new(
                RiskTerm::new(score, draw.second.clone()),
                1.0 + EXAMPLE1_OFFSET,
            ),
        ],
    )
}

/// The two-element parameter set `{[1, 1], [1, 0]}`.
pub fn example1_enumerable(draw: &Example1Draw) -> Result<EnumerableProblem> {
    EnumerableProblem::new(
        example1_problem(draw)?,
        Architecture::linear(2, 1, false),
        vec![vec![1.0, 1.0], vec![1.0, 0.0]],
    )
}

/// One trial: draw, solve by enumeration, score at the population level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Trial {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub tau_bar: f64,
    pub theta_hat: Option<[f64; 2]>,
    #[serde(rename = "population_J")]
    pub population_j: Option<f64>,
}

pub fn example1_trial(n: usize, seed: u64) -> Result<Example1Trial> {
    let draw = example1_sample(n, seed)?;
    let outcome = ecrm_enumerate(&example1_enumerable(&draw)?)?;
    let theta_hat = match outcome {
        EcrmOutcome::Solved { theta, .. } => Some([theta[0], theta[1]]),
        EcrmOutcome::Infeasible => None,
    };
    Ok(Example1Trial {
        seed,
        n,
        tau_bar: draw.tau_bar(),
        theta_hat,
        population_j: theta_hat.map(example1_population_objective),
    })
}

/// Model with parameters `theta` for the example's architecture.
pub fn example1_model(theta: [f64; 2]) -> ModelState {
    ModelState {
        arch: Architecture::linear(2, 1, false),
        params: theta.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::empirical_risk;

    #[test]
    fn closed_form_values() {
        assert_eq!(example1_population_objective([1.0, 1.0]), 1.0 / 16.0);
        assert_eq!(example1_population_objective([1.0, 0.0]), 1.0 / 8.0);
        assert_eq!(example1_population_objective([0.0, 0.0]), 0.0);
    }

    #[test]
    fn construction_and_determinism() {
        let a = example1_sample(50, 3).unwrap();
        let b = example1_sample(50, 3).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.tau, b.tau);
        assert!(a.first.iter().all(|s| s.features[0] == -1.0));
        for (i, t) in a.tau.iter().enumerate() {
            assert_eq!(a.first.get(i).features[1], *t);
            assert_eq!(a.second.get(i).features[0], -t);
            assert!((-0.5..=0.5).contains(t));
            assert!((0.0..=0.25).contains(&a.alpha[i]));
        }
    }

    #[test]
    fn shifted_slacks_match_unshifted_means() {
        let d = example1_sample(40, 11).unwrap();
        let p = example1_problem(&d).unwrap();
        let m = example1_model([1.0, 1.0]);
        let s1 = p.constraints[0].slack(&m).unwrap();
        let s2 = p.constraints[1].slack(&m).unwrap();
        let tb = d.tau_bar();
        assert!((s1 - tb).abs() < 1e-12, "{s1} {tb}");
        assert!((s2 + tb).abs() < 1e-12);
        let obj = empirical_risk(&m, &p.objective.loss, &p.objective.dataset).unwrap();
        assert!(obj >= 0.0);
    }

    #[test]
    fn trial_picks_second_candidate() {
        let t = example1_trial(100, 5).unwrap();
        assert_eq!(t.theta_hat, Some([1.0, 0.0]));
        assert_eq!(t.population_j, Some(0.125));
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"N\":100") && json.contains("\"population_J\":0.125"));
    }

    #[test]
    fn grid_candidates_enumerates_product() {
        let g = grid_candidates(&[(0.0, 1.0, 3), (5.0, 5.0, 1)]).unwrap();
        assert_eq!(g, vec![vec![0.0, 5.0], vec![0.5, 5.0], vec![1.0, 5.0]]);
    }

    fn scalar_problem(points: &[(f64, f64)], threshold: f64) -> EnumerableProblem {
        let d = Dataset::new(
            "d",
            points
                .iter()
                .map(|(x, y)| Sample::new(vec![*x], Label::Real(*y)))
                .collect(),
        )
        .unwrap();
        let obj = RiskTerm::new(LossSpec::squared(1.5).unwrap(), d.clone());
        let con = RiskTerm::new(
            LossSpec::linear_score(1.0, 0.0, 1.5).unwrap(),
            Dataset::new("one", vec![Sample::new(vec![1.0], Label::Real(1.0))]).unwrap(),
        );
        let p = Problem::new(obj, vec![ConstraintSpec::new(con, threshold)]).unwrap();
        EnumerableProblem::new(
            p,
            Architecture::linear(1, 1, false),
            grid_candidates(&[(0.0, 1.0, 1001)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn convex_toy_dual_matches_analytic_optimum() {
        // f(t) = (t - 1)^2 + 0.04, t <= 0.5: optimum 0.29 at mu = 1
        let ep = scalar_problem(&[(1.0, 0.8), (1.0, 1.2)], 0.5);
        let out = dual_enumerate(&ep, &MuGrid::default_for(1.5, Some(0.5))).unwrap();
        assert!((out.d_hat - 0.29).abs() < 1e-9, "{}", out.d_hat);
        assert!((out.mu_star[0] - 1.0).abs() < 2e-3);
        assert!(!out.boundary_hit);
        let primal = ecrm_enumerate(&ep).unwrap();
        assert!(out.d_hat <= primal.value());
        assert!((primal.value() - 0.29).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_relaxed() {
        let ep = scalar_problem(&[(1.0, 0.8)], -0.1);
        assert_eq!(ecrm_enumerate(&ep).unwrap(), EcrmOutcome::Infeasible);
        let relaxed = ep.with_relaxation(0.1).unwrap();
        assert!(matches!(
            ecrm_enumerate(&relaxed).unwrap(),
            EcrmOutcome::Solved { index: 0, .. }
        ));
    }
}
