//! Bounded per-sample losses and their derivatives with respect to the
//! model output.
//!
//! Every loss is truncated to `[0, bound]`. Where the truncation (or the
//! probability clamp of the cross-entropy) is active the derivative is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Label;

/// Default probability clamp of the cross-entropy.
pub const DEFAULT_P_MIN: f64 = 1e-6;

/// The functional form of a loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Misclassification indicator. A single output is read as the
    /// probability of class 1; several outputs are arg-maxed.
    ZeroOne,
    /// Negative log-likelihood with the true-class probability clamped to
    /// `[p_min, 1 - p_min]`. A single output is a probability of class 1,
    /// several outputs are logits passed through a softmax.
    ClampedCrossEntropy { p_min: f64 },
    /// `(z - y)^2` on a single output.
    Squared,
    /// `max(0, 1 - y z)` with `y` in `{-1, +1}`.
    Hinge,
    /// `|z - y|` on a single output.
    Absolute,
    /// `1(z - shift >= 0)`.
    RateIndicator { shift: f64 },
    /// `1 / (1 + exp(-slope (z - shift)))`.
    RateSigmoid { slope: f64, shift: f64 },
    /// `scale * y * z + offset`, an affine score of the output.
    LinearScore { scale: f64, offset: f64 },
    /// `|y * z|`.
    AbsoluteScore,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::ZeroOne => "zero-one",
            LossKind::ClampedCrossEntropy { .. } => "clamped-cross-entropy",
            LossKind::Squared => "squared",
            LossKind::Hinge => "hinge",
            LossKind::Absolute => "absolute",
            LossKind::RateIndicator { .. } => "rate-indicator",
            LossKind::RateSigmoid { .. } => "rate-sigmoid",
            LossKind::LinearScore { .. } => "linear-score",
            LossKind::AbsoluteScore => "absolute-score",
        }
    }
}

/// A loss together with its range bound `B` and optional Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub bound: f64,
    /// `None` when the Lipschitz constant is unknown.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind, bound: f64) -> Result<Self> {
        let spec = LossSpec {
            kind,
            bound,
            lipschitz: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero_one() -> Self {
        LossSpec {
            kind: LossKind::ZeroOne,
            bound: 1.0,
            lipschitz: None,
        }
    }

    /// Cross-entropy clamped at `p_min`; its bound is `-ln(p_min)`.
    pub fn cross_entropy(p_min: f64) -> Result<Self> {
        LossSpec::new(LossKind::ClampedCrossEntropy { p_min }, -p_min.ln())
    }

    pub fn squared(bound: f64) -> Result<Self> {
        LossSpec::new(LossKind::Squared, bound)
    }

    pub fn hinge(bound: f64) -> Result<Self> {
        LossSpec::new(LossKind::Hinge, bound)
    }

    pub fn absolute(bound: f64) -> Result<Self> {
        LossSpec::new(LossKind::Absolute, bound)
    }

    pub fn rate_indicator(shift: f64) -> Result<Self> {
        LossSpec::new(LossKind::RateIndicator { shift }, 1.0)
    }

    pub fn rate_sigmoid(slope: f64, shift: f64) -> Result<Self> {
        LossSpec::new(LossKind::RateSigmoid { slope, shift }, 1.0)
    }

    pub fn linear_score(scale: f64, offset: f64, bound: f64) -> Result<Self> {
        LossSpec::new(LossKind::LinearScore { scale, offset }, bound)
    }

    pub fn absolute_score(bound: f64) -> Result<Self> {
        LossSpec::new(LossKind::AbsoluteScore, bound)
    }

    pub fn with_lipschitz(mut self, m: f64) -> Self {
        self.lipschitz = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(Error::config(format!(
                "loss bound must be positive and finite, got {}",
                self.bound
            )));
        }
        if let Some(m) = self.lipschitz {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::config("Lipschitz constant must be positive"));
            }
        }
        match self.kind {
            LossKind::ClampedCrossEntropy { p_min } => {
                if !(p_min > 0.0 && p_min < 0.5) {
                    return Err(Error::config(format!(
                        "clamp_p_min must lie in (0, 1/2), got {p_min}"
                    )));
                }
                let expected = -p_min.ln();
                if (self.bound - expected).abs() > 1e-12 * expected {
                    return Err(Error::config(format!(
                        "cross-entropy bound must equal -ln(p_min) = {expected}"
                    )));
                }
            }
            LossKind::RateSigmoid { slope, shift } => {
                if !(slope.is_finite() && slope >= 1.0) || !shift.is_finite() {
                    return Err(Error::config(format!(
                        "sigmoid slope must be >= 1, got {slope}"
                    )));
                }
            }
            LossKind::RateIndicator { shift } if !shift.is_finite() => {
                return Err(Error::config("rate shift must be finite"));
            }
            LossKind::LinearScore { scale, offset }
                if !scale.is_finite() || !offset.is_finite() =>
            {
                return Err(Error::config("linear score coefficients must be finite"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(
            self.kind,
            LossKind::ZeroOne | LossKind::RateIndicator { .. }
        )
    }

    /// The rate argument `g = z - shift` for rate losses.
    pub fn rate_argument(&self, prediction: &[f64]) -> Option<f64> {
        match self.kind {
            LossKind::RateIndicator { shift } | LossKind::RateSigmoid { shift, .. } => {
                prediction.first().map(|z| z - shift)
            }
            _ => None,
        }
    }

    /// Loss value, always in `[0, bound]`.
    pub fn eval(&self, prediction: &[f64], label: &Label) -> Result<f64> {
        let raw = match self.kind {
            LossKind::ZeroOne => {
                let class = label.class()?;
                (predicted_class(prediction)? != class) as u8 as f64
            }
            LossKind::ClampedCrossEntropy { p_min } => {
                cross_entropy(prediction, label, p_min, false)?.0
            }
            LossKind::Squared => {
                let d = scalar(prediction)? - label.value();
                d * d
            }
            LossKind::Hinge => (1.0 - label.signed() * scalar(prediction)?).max(0.0),
            LossKind::Absolute => (scalar(prediction)? - label.value()).abs(),
            LossKind::RateIndicator { shift } => indicator(scalar(prediction)? - shift),
            LossKind::RateSigmoid { slope, shift } => {
                logistic(slope * (scalar(prediction)? - shift))
            }
            LossKind::LinearScore { scale, offset } => {
                scale * label.signed() * scalar(prediction)? + offset
            }
            LossKind::AbsoluteScore => (label.signed() * scalar(prediction)?).abs(),
        };
        if raw.is_nan() {
            return Err(Error::Numeric(format!("{} loss is NaN", self.kind.name())));
        }
        Ok(raw.clamp(0.0, self.bound))
    }

    /// Derivative of [`LossSpec::eval`] with respect to the prediction.
    pub fn grad(&self, prediction: &[f64], label: &Label) -> Result<Vec<f64>> {
        let (value, mut g) = match self.kind {
            LossKind::ZeroOne | LossKind::RateIndicator { .. } => {
                return Err(Error::SurrogateRequired(self.kind.name()))
            }
            LossKind::ClampedCrossEntropy { p_min } => {
                let (v, g) = cross_entropy(prediction, label, p_min, true)?;
                (v, g.unwrap_or_default())
            }
            LossKind::Squared => {
                let d = scalar(prediction)? - label.value();
                (d * d, vec![2.0 * d])
            }
            LossKind::Hinge => {
                let y = label.signed();
                let m = 1.0 - y * scalar(prediction)?;
                if m > 0.0 {
                    (m, vec![-y])
                } else {
                    (0.0, vec![0.0])
                }
            }
            LossKind::Absolute => {
                let d = scalar(prediction)? - label.value();
                (d.abs(), vec![sign(d)])
            }
            LossKind::RateSigmoid { slope, shift } => {
                let s = logistic(slope * (scalar(prediction)? - shift));
                (s, vec![slope * s * (1.0 - s)])
            }
            LossKind::LinearScore { scale, offset } => {
                let y = label.signed();
                (scale * y * scalar(prediction)? + offset, vec![scale * y])
            }
            LossKind::AbsoluteScore => {
                let y = label.signed();
                let v = y * scalar(prediction)?;
                (v.abs(), vec![y * sign(v)])
            }
        };
        if value.is_nan() || g.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(format!(
                "{} gradient is NaN",
                self.kind.name()
            )));
        }
        if !(0.0..=self.bound).contains(&value) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(g)
    }
}

/// `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn indicator(g: f64) -> f64 {
    if g >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn scalar(prediction: &[f64]) -> Result<f64> {
    match prediction {
        [z] => Ok(*z),
        _ => Err(Error::input(format!(
            "loss expects a single output, got {}",
            prediction.len()
        ))),
    }
}

/// Class predicted by an output vector; ties go to the lowest index.
pub fn predicted_class(prediction: &[f64]) -> Result<usize> {
    match prediction {
        [] => Err(Error::input("empty prediction")),
        [p] => Ok((*p >= 0.5) as usize),
        _ => {
            let mut best = 0;
            for (k, &z) in prediction.iter().enumerate().skip(1) {
                if z > prediction[best] {
                    best = k;
                }
            }
            Ok(best)
        }
    }
}

fn cross_entropy(
    prediction: &[f64],
    label: &Label,
    p_min: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let class = label.class()?;
    let hi = 1.0 - p_min;
    match prediction {
        [] => Err(Error::input("empty prediction")),
        [p] => {
            if class > 1 {
                return Err(Error::input(format!(
                    "binary cross-entropy needs class 0 or 1, got {class}"
                )));
            }
            let (q, dq) = if class == 1 {
                (*p, 1.0)
            } else {
                (1.0 - p, -1.0)
            };
            if q.is_nan() {
                return Err(Error::Numeric("probability is NaN".into()));
            }
            let inside = q > p_min && q < hi;
            let value = -q.clamp(p_min, hi).ln();
            let grad = want_grad.then(|| vec![if inside { -dq / q } else { 0.0 }]);
            Ok((value, grad))
        }
        logits => {
            if class >= logits.len() {
                return Err(Error::input(format!(
                    "class {class} out of range for {} outputs",
                    logits.len()
                )));
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let log_q = logits[class] - max - denom.ln();
            let q = log_q.exp();
            if q.is_nan() {
                return Err(Error::Numeric("softmax is NaN".into()));
            }
            let inside = q > p_min && q < hi;
            let value = if inside {
                -log_q
            } else {
                -q.clamp(p_min, hi).ln()
            };
            let grad = want_grad.then(|| {
                if inside {
                    logits
                        .iter()
                        .enumerate()
                        .map(|(k, z)| (z - max).exp() / denom - (k == class) as u8 as f64)
                        .collect()
                } else {
                    vec![0.0; logits.len()]
                }
            });
            Ok((value, grad))
        }
    }
}
