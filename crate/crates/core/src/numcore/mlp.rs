//! Fully connected network with hand-written backpropagation.
//!
//! Parameters are stored layer by layer: the `n_out x n_in` weight matrix
//! (row-major, one row per output unit) followed by the `n_out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{dot, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 1 -> 64 -> 64 -> 1 tanh regression network.
    pub fn sine_regressor() -> Self {
        MlpSpec {
            layer_sizes: vec![1, 64, 64, 1],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 layers, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    n_in: w[0],
                    n_out: w[1],
                    offset,
                };
                offset += (w[0] + 1) * w[1];
                layer
            })
            .collect()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        self.validate()?;
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "parameter vector",
                format!(
                    "{} parameters for {:?}",
                    self.param_count(),
                    self.layer_sizes
                ),
                params.len(),
            ));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape(
                "network input width",
                self.input_dim(),
                inputs.cols(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.n_in * self.n_out]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.n_in * self.n_out;
        &p[start..start + self.n_out]
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + (self.n_in + 1) * self.n_out
    }

    /// `out = W x + b`
    fn affine(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let w = self.weights(p);
        let b = self.bias(p);
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = dot(&w[o * self.n_in..(o + 1) * self.n_in], x) + b[o];
        }
    }
}

/// Supervised examples for one task (or one slice of a task).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    targets: Matrix,
    loss_kind: LossKind,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix, loss_kind: LossKind) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(
                "Batch rows",
                format!("{} target rows", inputs.rows()),
                targets.rows(),
            ));
        }
        if inputs.rows() == 0 {
            return Err(Error::InsufficientData("batch has no examples".into()));
        }
        if loss_kind == LossKind::CrossEntropy {
            for (i, row) in targets.iter_rows().enumerate() {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::Config(format!(
                        "cross-entropy target row {i} is not one-hot: {row:?}"
                    )));
                }
            }
        }
        Ok(Batch {
            inputs,
            targets,
            loss_kind,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class index of each one-hot target row.
    pub fn labels(&self) -> Vec<usize> {
        self.targets
            .iter_rows()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::InsufficientData("empty row selection".into()));
        }
        Ok(Batch {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
            loss_kind: self.loss_kind,
        })
    }

    pub fn concat(parts: &[Batch]) -> Result<Batch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("no batches to concatenate".into()))?;
        if parts.iter().any(|b| b.loss_kind != first.loss_kind) {
            return Err(Error::Config("mixed loss kinds in concatenation".into()));
        }
        let inputs: Vec<&Matrix> = parts.iter().map(|b| &b.inputs).collect();
        let targets: Vec<&Matrix> = parts.iter().map(|b| &b.targets).collect();
        Ok(Batch {
            inputs: Matrix::vstack(&inputs)?,
            targets: Matrix::vstack(&targets)?,
            loss_kind: first.loss_kind,
        })
    }
}

/// Per-call scratch space: activations of every layer for one example.
struct Scratch {
    acts: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &MlpSpec) -> Self {
        Scratch {
            acts: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Runs one example through the network, leaving every layer's activation in
/// `scratch`. The last entry holds the pre-softmax logits / raw outputs.
fn forward_example(
    spec: &MlpSpec,
    layers: &[Layer],
    p: &[f64],
    x: &[f64],
    scratch: &mut Scratch,
) -> Result<()> {
    scratch.acts[0].copy_from_slice(x);
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let (before, after) = scratch.acts.split_at_mut(l + 1);
        let input = &before[l];
        let out = &mut after[0];
        layer.affine(p, input, out);
        if l < last {
            match spec.hidden_activation {
                HiddenActivation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                HiddenActivation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("layer {l} forward"),
            });
        }
    }
    Ok(())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Network outputs, one row per input row. Softmax networks return
/// probabilities.
pub fn forward(spec: &MlpSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    spec.check_params(params)?;
    spec.check_inputs(inputs)?;
    let layers = spec.layers();
    let p = params.as_slice();
    let mut scratch = Scratch::new(spec);
    let mut out = Matrix::zeros(inputs.rows(), spec.output_dim());
    for (i, x) in inputs.iter_rows().enumerate() {
        forward_example(spec, &layers, p, x, &mut scratch)?;
        let row = out.row_mut(i);
        row.copy_from_slice(scratch.acts.last().expect("at least two layers"));
        if spec.output_activation == OutputActivation::Softmax {
            softmax_in_place(row);
        }
    }
    Ok(out)
}

/// Mean loss over the batch and its gradient with respect to every parameter.
///
/// Mean squared error sums squared residuals over output units and averages
/// over examples. Cross-entropy always works from the final-layer logits
/// (log-sum-exp), whatever the output activation.
pub fn loss_and_gradient(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_inputs(batch.inputs())?;
    if batch.targets().cols() != spec.output_dim() {
        return Err(Error::shape(
            "target width",
            spec.output_dim(),
            batch.targets().cols(),
        ));
    }
    if batch.loss_kind() == LossKind::MeanSquaredError
        && spec.output_activation == OutputActivation::Softmax
    {
        return Err(Error::Config(
            "mean squared error on a softmax output is not supported".into(),
        ));
    }

    let layers = spec.layers();
    let p = params.as_slice();
    let n = batch.len() as f64;
    let mut scratch = Scratch::new(spec);
    let mut grad = vec![0.0; spec.param_count()];
    let mut loss = 0.0;
    let widest = spec.layer_sizes.iter().copied().max().unwrap_or(1);
    let mut delta = vec![0.0; widest];
    let mut next_delta = vec![0.0; widest];

    for (x, t) in batch.inputs().iter_rows().zip(batch.targets().iter_rows()) {
        forward_example(spec, &layers, p, x, &mut scratch)?;
        let out = scratch.acts.last().expect("at least two layers");
        let d = &mut delta[..out.len()];
        match batch.loss_kind() {
            LossKind::MeanSquaredError => {
                for ((slot, &y), &target) in d.iter_mut().zip(out).zip(t) {
                    let r = y - target;
                    loss += r * r / n;
                    *slot = 2.0 * r / n;
                }
            }
            LossKind::CrossEntropy => {
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_total = out.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
                for ((slot, &z), &target) in d.iter_mut().zip(out).zip(t) {
                    let log_p = z - log_total;
                    loss -= target * log_p / n;
                    *slot = (log_p.exp() - target) / n;
                }
            }
        }

        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &scratch.acts[l];
            let d = &delta[..layer.n_out];
            let g = &mut grad[layer.range()];
            let (gw, gb) = g.split_at_mut(layer.n_in * layer.n_out);
            for (o, &d_o) in d.iter().enumerate() {
                if d_o != 0.0 {
                    for (gw_oi, &a_i) in gw[o * layer.n_in..(o + 1) * layer.n_in]
                        .iter_mut()
                        .zip(input)
                    {
                        *gw_oi += d_o * a_i;
                    }
                }
                gb[o] += d_o;
            }
            if l == 0 {
                break;
            }
            // propagate to the previous hidden layer
            let w = layer.weights(p);
            let nd = &mut next_delta[..layer.n_in];
            nd.iter_mut().for_each(|v| *v = 0.0);
            for (o, &d_o) in d.iter().enumerate() {
                for (slot, &w_oi) in nd.iter_mut().zip(&w[o * layer.n_in..(o + 1) * layer.n_in]) {
                    *slot += w_oi * d_o;
                }
            }
            match spec.hidden_activation {
                HiddenActivation::Tanh => {
                    for (slot, &a) in nd.iter_mut().zip(input) {
                        *slot *= 1.0 - a * a;
                    }
                }
                HiddenActivation::Relu => {
                    for (slot, &a) in nd.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *slot = 0.0;
                        }
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite {
            stage: "loss".into(),
        });
    }
    for (l, layer) in layers.iter().enumerate() {
        if !grad[layer.range()].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("layer {l} gradient"),
            });
        }
    }
    Ok((loss, ParamVector::from_finite(grad)))
}

/// Mean batch loss without the gradient.
pub fn loss(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    loss_and_gradient(spec, params, batch).map(|(l, _)| l)
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
        let start = layer.offset;
        for w in &mut values[start..start + layer.n_in * layer.n_out] {
            *w = rng.random_range(-limit..=limit);
        }
    }
    ParamVector::from_finite(values)
}
