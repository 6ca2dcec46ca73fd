//! Differentiable predictors with exact analytic gradients.
//!
//! Parameters live in one flat vector. Each affine layer stores its weight
//! matrix row-major (`outputs x inputs`) followed by its bias, if any.

mod io;
mod optim;

pub use io::{parse_model, read_model, write_model, MODEL_MAGIC};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{logistic, LossSpec};
use crate::problem::{Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Map applied to the last layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// `W x (+ b)` with `outputs` rows.
    Linear {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// `sigmoid(w . x + b)`.
    Logistic { inputs: usize },
    /// Affine layers with `activation` in between; `widths` lists every
    /// layer size including input and output.
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
        head: OutputHead,
    },
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    bias: bool,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> usize {
        self.inputs * self.outputs
    }
    fn len(&self) -> usize {
        self.weights() + if self.bias { self.outputs } else { 0 }
    }
}

impl Architecture {
    pub fn linear(inputs: usize, outputs: usize, bias: bool) -> Self {
        Architecture::Linear {
            inputs,
            outputs,
            bias,
        }
    }

    pub fn logistic(inputs: usize) -> Self {
        Architecture::Logistic { inputs }
    }

    pub fn mlp(widths: Vec<usize>, activation: Activation, head: OutputHead) -> Self {
        Architecture::Mlp {
            widths,
            activation,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Linear {
                inputs, outputs, ..
            } if *inputs == 0 || *outputs == 0 => {
                Err(Error::config("linear model needs nonzero dimensions"))
            }
            Architecture::Logistic { inputs: 0 } => Err(Error::config(
                "logistic model needs nonzero input dimension",
            )),
            Architecture::Mlp { widths, .. } if widths.len() < 2 || widths.contains(&0) => {
                Err(Error::config("mlp needs at least two nonzero layer widths"))
            }
            _ => {
                self.checked_param_count()
                    .ok_or_else(|| Error::config("parameter count overflows"))?;
                Ok(())
            }
        }
    }

    fn checked_param_count(&self) -> Option<usize> {
        let layer =
            |i: usize, o: usize, b: bool| i.checked_mul(o)?.checked_add(if b { o } else { 0 });
        match self {
            Architecture::Linear {
                inputs,
                outputs,
                bias,
            } => layer(*inputs, *outputs, *bias),
            Architecture::Logistic { inputs } => inputs.checked_add(1),
            Architecture::Mlp { widths, .. } => widths
                .windows(2)
                .try_fold(0usize, |acc, w| acc.checked_add(layer(w[0], w[1], true)?)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Linear { inputs, .. } | Architecture::Logistic { inputs } => *inputs,
            Architecture::Mlp { widths, .. } => widths[0],
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Linear { outputs, .. } => *outputs,
            Architecture::Logistic { .. } => 1,
            Architecture::Mlp { widths, .. } => *widths.last().unwrap_or(&0),
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |inputs, outputs, bias| {
            let l = Layer {
                inputs,
                outputs,
                bias,
                offset,
            };
            offset += l.len();
            out.push(l);
        };
        match self {
            Architecture::Linear {
                inputs,
                outputs,
                bias,
            } => push(*inputs, *outputs, *bias),
            Architecture::Logistic { inputs } => push(*inputs, 1, true),
            Architecture::Mlp { widths, .. } => {
                for w in widths.windows(2) {
                    push(w[0], w[1], true);
                }
            }
        }
        out
    }

    fn hidden_activation(&self) -> Activation {
        match self {
            Architecture::Mlp { activation, .. } => *activation,
            _ => Activation::Tanh,
        }
    }

    fn head(&self) -> OutputHead {
        match self {
            Architecture::Linear { .. } => OutputHead::Identity,
            Architecture::Logistic { .. } => OutputHead::Sigmoid,
            Architecture::Mlp { head, .. } => *head,
        }
    }
}

/// Parameters `theta` together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

struct Cache {
    /// Input to each layer (`activations[0]` is the sample).
    activations: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ModelState {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::input(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("parameters must be finite".into()));
        }
        Ok(ModelState { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(ModelState {
            arch,
            params: vec![0.0; n],
        })
    }

    /// Default initialization: zeros for linear and logistic models,
    /// Glorot-uniform weights and zero biases for the mlp.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = ModelState::zeros(arch)?;
        if let Architecture::Mlp { .. } = model.arch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for layer in model.arch.layers() {
                let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
                for p in &mut model.params[layer.offset..layer.offset + layer.weights()] {
                    *p = rng.random_range(-limit..=limit);
                }
            }
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.output)
    }

    fn forward(&self, features: &[f64]) -> Result<Cache> {
        if features.len() != self.input_dim() {
            return Err(Error::input(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        let layers = self.arch.layers();
        let act = self.arch.hidden_activation();
        let mut activations = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut a = features.to_vec();
        for (li, layer) in layers.iter().enumerate() {
            let w = &self.params[layer.offset..layer.offset + layer.weights()];
            let mut z: Vec<f64> = w
                .chunks_exact(layer.inputs)
                .map(|row| row.iter().zip(&a).map(|(wi, xi)| wi * xi).sum())
                .collect();
            if layer.bias {
                let b = &self.params[layer.offset + layer.weights()..layer.offset + layer.len()];
                z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
            }
            activations.push(a);
            a = if li + 1 < layers.len() {
                z.iter()
                    .map(|&v| match act {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    })
                    .collect()
            } else {
                match self.arch.head() {
                    OutputHead::Identity => z.clone(),
                    OutputHead::Sigmoid => z.iter().map(|&v| logistic(v)).collect(),
                }
            };
            pre.push(z);
        }
        Ok(Cache {
            activations,
            pre,
            output: a,
        })
    }

    /// Back-propagates `upstream = d loss / d output`. Adds `scale` times the
    /// parameter gradient into `grad_params` (when given) and returns the
    /// gradient with respect to the input, unscaled.
    fn backward(
        &self,
        cache: &Cache,
        upstream: &[f64],
        scale: f64,
        mut grad_params: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let layers = self.arch.layers();
        let act = self.arch.hidden_activation();
        let mut delta: Vec<f64> = match self.arch.head() {
            OutputHead::Identity => upstream.to_vec(),
            OutputHead::Sigmoid => upstream
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        for li in (0..layers.len()).rev() {
            let layer = layers[li];
            let input = &cache.activations[li];
            let w = &self.params[layer.offset..layer.offset + layer.weights()];
            if let Some(gp) = grad_params.as_deref_mut() {
                let gw = &mut gp[layer.offset..layer.offset + layer.len()];
                for (o, d) in delta.iter().enumerate() {
                    let sd = scale * d;
                    for (g, x) in gw[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter_mut()
                        .zip(input)
                    {
                        *g += sd * x;
                    }
                }
                if layer.bias {
                    for (g, d) in gw[layer.weights()..].iter_mut().zip(&delta) {
                        *g += scale * d;
                    }
                }
            }
            let mut back = vec![0.0; layer.inputs];
            for (row, d) in w.chunks_exact(layer.inputs).zip(&delta) {
                for (b, wi) in back.iter_mut().zip(row) {
                    *b += wi * d;
                }
            }
            if li > 0 {
                let below = &cache.pre[li - 1];
                for (b, &z) in back.iter_mut().zip(below) {
                    *b *= match act {
                        Activation::Tanh => {
                            let t = z.tanh();
                            1.0 - t * t
                        }
                        Activation::Relu => (z > 0.0) as u8 as f64,
                    };
                }
            }
            delta = back;
        }
        delta
    }

    /// Adds `scale * grad_theta loss(f(x), y)` into `out`.
    pub fn accumulate_loss_grad(
        &self,
        loss: &LossSpec,
        sample: &Sample,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if out.len() != self.params.len() {
            return Err(Error::input("gradient buffer has the wrong length"));
        }
        let cache = self.forward(&sample.features)?;
        let upstream = loss.grad(&cache.output, &sample.label)?;
        self.backward(&cache, &upstream, scale, Some(out));
        Ok(())
    }

    /// Exact gradient of `loss(f(x), y)` with respect to `x`.
    pub fn input_grad(&self, loss: &LossSpec, sample: &Sample) -> Result<Vec<f64>> {
        let cache = self.forward(&sample.features)?;
        let upstream = loss.grad(&cache.output, &sample.label)?;
        Ok(self.backward(&cache, &upstream, 1.0, None))
    }
}

/// Gradient of `sum_j w_j * empirical_risk(model, loss_j, batch_j)` with
/// respect to the parameters.
pub fn grad_params(
    model: &ModelState,
    weighted_losses: &[(f64, &LossSpec, &Dataset)],
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; model.params.len()];
    for (w, loss, batch) in weighted_losses {
        if !w.is_finite() {
            return Err(Error::Numeric(format!("weight {w} is not finite")));
        }
        if batch.is_empty() {
            return Err(Error::input(format!("batch `{}` is empty", batch.name())));
        }
        if !loss.is_differentiable() {
            return Err(Error::SurrogateRequired(loss.kind.name()));
        }
        let scale = w / batch.len() as f64;
        for s in batch.iter() {
            model.accumulate_loss_grad(loss, s, scale, &mut g)?;
        }
    }
    Ok(g)
}

/// Gradient of `loss(f(x), y)` with respect to the features `x`.
pub fn grad_input(model: &ModelState, loss: &LossSpec, sample: &Sample) -> Result<Vec<f64>> {
    model.input_grad(loss, sample)
}
