//! Minimal dense-network engine.
//!
//! Plain multilayer perceptrons in 64-bit floats: seed-deterministic
//! initialization, forward pass, exact reverse-mode gradients for weighted
//! scalar losses, Adam, SGD, and Polyak soft updates. Hidden layers use ReLU;
//! the output layer is identity or tanh, declared per network.
//!
//! Networks are plain value objects. Nothing here touches global state, so
//! identical inputs always produce identical outputs.

use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Activation applied to the final layer. Hidden layers are always ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Per-sample loss reduced as `mean_i weight_i * loss_i` over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `loss_i = ||output_i - target_i||^2` (squared Euclidean norm).
    WeightedMse,
    /// `loss_i = -output_i` for scalar-output networks.
    WeightedNegMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct AdamLayer {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamState {
    step: u64,
    layers: Vec<AdamLayer>,
}

/// Per-parameter gradients, shape-congruent with the network that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGradients>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGradients] {
        &self.layers
    }

    /// All entries in layer order, weights row-major before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.dw);
            out.extend_from_slice(&l.db);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for g in l.dw.iter_mut().chain(l.db.iter_mut()) {
                *g *= factor;
            }
        }
    }
}

/// Post-activation values per layer; `activations[0]` is the input and
/// `activations.last()` the network output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace is never empty")
    }
}

/// A dense multilayer perceptron with its Adam accumulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_dims: Vec<usize>,
    output_activation: OutputActivation,
    layers: Vec<DenseLayer>,
    adam: AdamState,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = x[k].mul_add(y[k], acc[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail = x.mul_add(*y, tail);
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], acc: &mut [f64]) {
    debug_assert_eq!(x.len(), acc.len());
    for (a, &xi) in acc.iter_mut().zip(x) {
        *a = alpha.mul_add(xi, *a);
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("{what} contains NaN or infinity")));
    }
    Ok(())
}

impl Network {
    /// Builds a network with the given layer dimensions.
    ///
    /// Parameters are drawn uniformly from `±1/sqrt(fan_in)` (weights
    /// row-major, then biases, layer by layer) from a single RNG seeded with
    /// `seed`, so identical `(layer_dims, seed)` yield bit-identical networks.
    pub fn init(layer_dims: &[usize], seed: u64, output_activation: OutputActivation) -> Result<Network> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "all layer dims must be >= 1, got {layer_dims:?}"
            )));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..out_dim).map(|_| dist.sample(&mut rng)).collect();
            layers.push(DenseLayer { in_dim, out_dim, w, b });
        }
        let adam = AdamState {
            step: 0,
            layers: layers
                .iter()
                .map(|l| AdamLayer {
                    m_w: vec![0.0; l.w.len()],
                    v_w: vec![0.0; l.v_len()],
                    m_b: vec![0.0; l.b.len()],
                    v_b: vec![0.0; l.b.len()],
                })
                .collect(),
        };
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            output_activation,
            layers,
            adam,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].w
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].b
    }

    /// Overwrites one layer's parameters; `w` is row-major `(out_dim, in_dim)`.
    pub fn set_layer(&mut self, layer: usize, w: &[f64], b: &[f64]) -> Result<()> {
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} out of range")))?;
        if w.len() != l.w.len() || b.len() != l.b.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} expects {} weights and {} biases, got {} and {}",
                l.w.len(),
                l.b.len(),
                w.len(),
                b.len()
            )));
        }
        l.w.copy_from_slice(w);
        l.b.copy_from_slice(b);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in layer order, weights row-major before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`params_flat`](Self::params_flat). Optimizer state is untouched.
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} params, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "input length {} does not match input dim {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = self.layer_forward(layer, &cur, i == last);
        }
        Ok(cur)
    }

    fn layer_forward(&self, layer: &DenseLayer, x: &[f64], is_output: bool) -> Vec<f64> {
        let mut y = vec![0.0; layer.out_dim];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let z = layer.b[o] + dot(row, x);
            *yo = if is_output {
                match self.output_activation {
                    OutputActivation::Identity => z,
                    OutputActivation::Tanh => z.tanh(),
                }
            } else {
                z.max(0.0)
            };
        }
        y
    }

    /// Forward pass that keeps every layer's post-activation values for a
    /// later backward pass.
    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = self.layer_forward(layer, activations.last().expect("nonempty"), i == last);
            activations.push(y);
        }
        Ok(ForwardTrace { activations })
    }

    /// Reverse pass from an output gradient.
    ///
    /// Accumulates parameter gradients into `grads` (`+=`) and returns the
    /// gradient with respect to the input. ReLU uses subgradient 0 at 0.
    pub fn backward_from_output_grad(
        &self,
        trace: &ForwardTrace,
        d_output: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument(
                "trace does not match network depth".into(),
            ));
        }
        if d_output.len() != self.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "output grad length {} does not match output dim {}",
                d_output.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("gradient shape mismatch".into()));
        }
        let last = self.layers.len() - 1;
        let mut d_y = d_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[i + 1];
            let x = &trace.activations[i];
            let g = &mut grads.layers[i];
            // d_z = d_y ⊙ act'(y), derivative recovered from the post-activation value
            let mut d_z = d_y;
            for (dz, &yo) in d_z.iter_mut().zip(y) {
                let deriv = if i == last {
                    match self.output_activation {
                        OutputActivation::Identity => 1.0,
                        OutputActivation::Tanh => 1.0 - yo * yo,
                    }
                } else if yo > 0.0 {
                    1.0
                } else {
                    0.0
                };
                *dz *= deriv;
            }
            let mut d_x = vec![0.0; layer.in_dim];
            for (o, &dzo) in d_z.iter().enumerate() {
                g.db[o] += dzo;
                let row = o * layer.in_dim..(o + 1) * layer.in_dim;
                axpy(dzo, x, &mut g.dw[row.clone()]);
                axpy(dzo, &layer.w[row], &mut d_x);
            }
            d_y = d_x;
        }
        Ok(d_y)
    }

    /// Exact gradient of `mean_i weight_i * loss_i` over a batch.
    ///
    /// Returns the gradients and the loss value. The per-sample output
    /// gradient is scaled by `weight_i / batch`, so the gradient of a
    /// weighted sample equals the weight times its unit-weight gradient.
    pub fn backward_weighted_scalar_loss(
        &self,
        kind: LossKind,
        inputs: &[Vec<f64>],
        targets: Option<&[Vec<f64>]>,
        weights: &[f64],
    ) -> Result<(Gradients, f64)> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        if weights.len() != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} inputs",
                weights.len(),
                inputs.len()
            )));
        }
        check_finite(weights, "weights")?;
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("weights must be >= 0".into()));
        }
        match (kind, targets) {
            (LossKind::WeightedMse, None) => {
                return Err(Error::InvalidArgument("weighted_mse requires targets".into()))
            }
            (LossKind::WeightedNegMean, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "weighted_neg_mean takes no targets".into(),
                ))
            }
            (LossKind::WeightedNegMean, None) if self.output_dim() != 1 => {
                return Err(Error::InvalidArgument(
                    "weighted_neg_mean requires a scalar output".into(),
                ))
            }
            _ => {}
        }
        if let Some(ts) = targets {
            if ts.len() != inputs.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} targets for {} inputs",
                    ts.len(),
                    inputs.len()
                )));
            }
            for t in ts {
                if t.len() != self.output_dim() {
                    return Err(Error::InvalidArgument(format!(
                        "target length {} does not match output dim {}",
                        t.len(),
                        self.output_dim()
                    )));
                }
                check_finite(t, "targets")?;
            }
        }
        for x in inputs {
            check_finite(x, "inputs")?;
        }

        let batch = inputs.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let mut d_out = vec![0.0; self.output_dim()];
        for (i, x) in inputs.iter().enumerate() {
            let trace = self.forward_trace(x)?;
            let out = trace.output();
            let scale = weights[i] / batch;
            match kind {
                LossKind::WeightedMse => {
                    let t = &targets.expect("validated")[i];
                    let mut sample_loss = 0.0;
                    for d in 0..out.len() {
                        let diff = out[d] - t[d];
                        sample_loss += diff * diff;
                        d_out[d] = scale * 2.0 * diff;
                    }
                    loss += weights[i] * sample_loss;
                }
                LossKind::WeightedNegMean => {
                    loss += weights[i] * -out[0];
                    d_out[0] = -scale;
                }
            }
            self.backward_from_output_grad(&trace, &d_out, &mut grads)?;
        }
        Ok((grads, loss / batch))
    }

    /// One Adam step with bias correction. Deterministic; increments the
    /// step counter even for zero gradients.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        self.check_grad_shapes(grads)?;
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::InvalidArgument(format!("lr must be finite and >= 0, got {lr}")));
        }
        self.adam.step += 1;
        let t = self.adam.step;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let st = &mut self.adam.layers[li];
            let g = &grads.layers[li];
            adam_update(&mut layer.w, &mut st.m_w, &mut st.v_w, &g.dw, lr, beta1, beta2, eps, c1, c2);
            adam_update(&mut layer.b, &mut st.m_b, &mut st.v_b, &g.db, lr, beta1, beta2, eps, c1, c2);
        }
        Ok(())
    }

    /// Plain gradient descent: `param -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.check_grad_shapes(grads)?;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            for (p, &d) in layer.w.iter_mut().zip(&g.dw) {
                *p -= lr * d;
            }
            for (p, &d) in layer.b.iter_mut().zip(&g.db) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    /// Polyak update: every parameter becomes `(1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Network, tau: f64) -> Result<()> {
        if source.layer_dims != self.layer_dims {
            return Err(Error::InvalidArgument(format!(
                "source dims {:?} do not match target dims {:?}",
                source.layer_dims, self.layer_dims
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau must be in [0, 1], got {tau}")));
        }
        for (layer, src) in self.layers.iter_mut().zip(&source.layers) {
            for (p, &s) in layer.w.iter_mut().zip(&src.w) {
                *p = (1.0 - tau) * *p + tau * s;
            }
            for (p, &s) in layer.b.iter_mut().zip(&src.b) {
                *p = (1.0 - tau) * *p + tau * s;
            }
        }
        Ok(())
    }

    fn check_grad_shapes(&self, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "gradients have {} layers, network has {}",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (g, l)) in grads.layers.iter().zip(&self.layers).enumerate() {
            if g.dw.len() != l.w.len() || g.db.len() != l.b.len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient shape mismatch at layer {i}"
                )));
            }
        }
        Ok(())
    }

    /// Serializes the full network (dims, activation tag, row-major
    /// parameters, optimizer state) as JSON. Float formatting round-trips
    /// bit-exactly.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Network> {
        let net: Network = serde_json::from_str(json)?;
        net.validate_shapes()?;
        Ok(net)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Network> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn validate_shapes(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layers.len() != self.layer_dims.len() - 1 {
            return Err(Error::InvalidArgument("inconsistent layer count".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != self.layer_dims[i]
                || l.out_dim != self.layer_dims[i + 1]
                || l.w.len() != l.in_dim * l.out_dim
                || l.b.len() != l.out_dim
            {
                return Err(Error::InvalidArgument(format!("bad shape at layer {i}")));
            }
        }
        if self.adam.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("optimizer state layer mismatch".into()));
        }
        for (st, l) in self.adam.layers.iter().zip(&self.layers) {
            if st.m_w.len() != l.w.len()
                || st.v_w.len() != l.w.len()
                || st.m_b.len() != l.b.len()
                || st.v_b.len() != l.b.len()
            {
                return Err(Error::InvalidArgument("optimizer state shape mismatch".into()));
            }
        }
        Ok(())
    }
}

impl DenseLayer {
    fn v_len(&self) -> usize {
        self.w.len()
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
