//! Small feedforward classifier with exact reverse-mode gradients with
//! respect to parameters and inputs, plus the optimizers and training
//! utilities the rest of the pipeline shares.
//!
//! Parameters live in one flat `f64` vector. The flatten order is fixed:
//! for each affine layer in input-to-output order, the weight matrix in
//! row-major layout with shape `(fan_out, fan_in)` — row `r` feeds output
//! unit `r` — followed by the bias vector of length `fan_out`. Hidden
//! layers apply the configured activation; the final layer is linear and
//! its raw outputs are the logits.
//!
//! Everything here is a pure function over value data: identical inputs
//! give bit-identical outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::vecmath;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    ///
    /// tanh' = 1 - a^2; relu' is 1 where the unit is active (a > 0 iff
    /// z > 0, and the z = 0 kink takes derivative 0).
    pub fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Wire code used by the checkpoint format (0 = tanh, 1 = relu).
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            other => Err(Error::Checkpoint(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
        }
    }
}

/// Which representation of the network output downstream losses consume.
///
/// `Logits` is the default everywhere; softmax outputs are selectable via
/// config for the output-drift terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    #[default]
    Logits,
    Softmax,
}

/// Network shape: input image dimensions, hidden widths, class count.
///
/// `hidden_widths` may be empty, in which case the model is a plain
/// softmax regression (one affine layer into the classes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_dims: (usize, usize, usize),
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn new(
        input_dims: (usize, usize, usize),
        hidden_widths: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let (h, w, c) = input_dims;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidConfig(format!(
                "input dims must be positive, got {h}x{w}x{c}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be >= 2, got {num_classes}"
            )));
        }
        if hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(Self {
            input_dims,
            hidden_widths,
            num_classes,
            activation,
        })
    }

    /// Flattened input length `height * width * channels`.
    pub fn input_len(&self) -> usize {
        self.input_dims.0 * self.input_dims.1 * self.input_dims.2
    }

    /// `(fan_in, fan_out)` of each affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_len();
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }

    /// Total parameter count: sum over layers of `(fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fi, fo)| (fi + 1) * fo)
            .sum()
    }

    /// Flat offset of each layer's parameter block.
    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::new();
        let mut off = 0;
        for (fi, fo) in self.layer_dims() {
            offsets.push(off);
            off += (fi + 1) * fo;
        }
        offsets
    }
}

/// Flat parameter vector bound to the architecture it parameterizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: ArchSpec,
    values: Vec<f64>,
}

impl ParamVector {
    /// Wraps raw values, validating length and finiteness.
    pub fn new(arch: ArchSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if !vecmath::all_finite(&values) {
            return Err(Error::Numerical(
                "parameter vector contains non-finite entries".into(),
            ));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same architecture, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), values)
    }
}

/// One layer's parameters in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out, fan_in)`; row `r` feeds output unit `r`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Splits a flat parameter vector into per-layer weight/bias blocks.
pub fn unflatten(theta: &ParamVector) -> Vec<LayerParams> {
    let mut layers = Vec::new();
    let mut off = 0;
    for (fi, fo) in theta.arch.layer_dims() {
        let weights = theta.values[off..off + fi * fo].to_vec();
        let biases = theta.values[off + fi * fo..off + (fi + 1) * fo].to_vec();
        layers.push(LayerParams {
            fan_in: fi,
            fan_out: fo,
            weights,
            biases,
        });
        off += (fi + 1) * fo;
    }
    layers
}

/// Re-flattens per-layer blocks; inverse of [`unflatten`] bit for bit.
pub fn flatten(layers: &[LayerParams]) -> Vec<f64> {
    let mut values = Vec::new();
    for layer in layers {
        values.extend_from_slice(&layer.weights);
        values.extend_from_slice(&layer.biases);
    }
    values
}

/// Image plus class label. Pixels are flat in row-major order with the
/// channel index innermost: `index = (row * width + col) * channels + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl Sample {
    /// Validates pixel bounds `[0, 1]`.
    pub fn new(pixels: Vec<f64>, label: usize) -> Result<Self> {
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(
                "sample pixels must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { pixels, label })
    }
}

/// Deterministic parameter initialization: weights drawn from
/// `N(0, 1/fan_in)` (standard deviation `1/sqrt(fan_in)`), biases zero.
pub fn init_params(arch: &ArchSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(arch.param_count());
    for (fi, fo) in arch.layer_dims() {
        let std = 1.0 / (fi as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        for _ in 0..fi * fo {
            values.push(dist.sample(&mut rng));
        }
        values.extend(std::iter::repeat(0.0).take(fo));
    }
    ParamVector::new(arch.clone(), values).expect("init produces a valid vector")
}

fn check_input(theta: &ParamVector, x: &Sample) -> Result<()> {
    if x.pixels.len() != theta.arch.input_len() {
        return Err(Error::DimensionMismatch {
            what: "sample pixels",
            expected: theta.arch.input_len(),
            got: x.pixels.len(),
        });
    }
    Ok(())
}

fn check_label(theta: &ParamVector, y: usize) -> Result<()> {
    if y >= theta.arch.num_classes {
        return Err(Error::InvalidConfig(format!(
            "label {y} out of range for {} classes",
            theta.arch.num_classes
        )));
    }
    Ok(())
}

/// Forward pass storing every layer's post-activation (index 0 holds the
/// input pixels, the last entry holds the logits).
fn forward_trace(theta: &ParamVector, pixels: &[f64]) -> Vec<Vec<f64>> {
    let dims = theta.arch.layer_dims();
    let num_layers = dims.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
    acts.push(pixels.to_vec());
    let mut off = 0;
    for (l, &(fi, fo)) in dims.iter().enumerate() {
        let w = &theta.values[off..off + fi * fo];
        let b = &theta.values[off + fi * fo..off + (fi + 1) * fo];
        let a_in = acts.last().expect("non-empty trace");
        let mut z = vec![0.0; fo];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut sum = b[r];
            let row = &w[r * fi..(r + 1) * fi];
            for (wi, ai) in row.iter().zip(a_in) {
                sum += wi * ai;
            }
            *zr = sum;
        }
        if l + 1 < num_layers {
            for zr in z.iter_mut() {
                *zr = theta.arch.activation.apply(*zr);
            }
        }
        acts.push(z);
        off += (fi + 1) * fo;
    }
    acts
}

/// Logits of the classifier at `x`.
pub fn forward(theta: &ParamVector, x: &Sample) -> Result<Vec<f64>> {
    check_input(theta, x)?;
    Ok(forward_trace(theta, &x.pixels).pop().expect("logits"))
}

/// Network output in the requested representation.
pub fn output(theta: &ParamVector, x: &Sample, mode: OutputMode) -> Result<Vec<f64>> {
    let logits = forward(theta, x)?;
    Ok(match mode {
        OutputMode::Logits => logits,
        OutputMode::Softmax => softmax(&logits),
    })
}

/// L2 distance between two models' outputs on the same input. Shared by
/// the forgetting loss and the OutDiff metric so the two agree bit for bit.
pub fn output_l2_distance(
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    x: &Sample,
    mode: OutputMode,
) -> Result<f64> {
    let fa = output(theta_a, x, mode)?;
    let fb = output(theta_b, x, mode)?;
    Ok(vecmath::l2_norm(&vecmath::sub(&fa, &fb)))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Log-sum-exp with max shift; finite for logits up to 1e4 in magnitude.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy loss of `theta` on `(x, y)`.
pub fn loss(theta: &ParamVector, x: &Sample, y: usize) -> Result<f64> {
    check_label(theta, y)?;
    let logits = forward(theta, x)?;
    Ok(log_sum_exp(&logits) - logits[y])
}

/// Reverse pass from a seed vector at the logits. Returns the gradient of
/// `<logits, seed>` with respect to the parameters and to the input pixels.
fn backward(theta: &ParamVector, pixels: &[f64], seed: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims = theta.arch.layer_dims();
    let offsets = theta.arch.layer_offsets();
    let acts = forward_trace(theta, pixels);

    let mut gparams = vec![0.0; theta.values.len()];
    let mut delta = seed.to_vec();
    for l in (0..dims.len()).rev() {
        let (fi, fo) = dims[l];
        let off = offsets[l];
        let a_in = &acts[l];
        let w = &theta.values[off..off + fi * fo];

        for (r, &d) in delta.iter().enumerate() {
            gparams[off + fi * fo + r] = d;
            let grow = &mut gparams[off + r * fi..off + (r + 1) * fi];
            for (gi, ai) in grow.iter_mut().zip(a_in) {
                *gi = d * ai;
            }
        }

        let mut delta_in = vec![0.0; fi];
        for (r, &d) in delta.iter().enumerate() {
            let row = &w[r * fi..(r + 1) * fi];
            for (di, wi) in delta_in.iter_mut().zip(row) {
                *di += wi * d;
            }
        }
        if l > 0 {
            for (di, ai) in delta_in.iter_mut().zip(a_in) {
                *di *= theta.arch.activation.deriv_from_output(*ai);
            }
        }
        delta = delta_in;
    }
    (gparams, delta)
}

/// Seed vector of the cross-entropy loss at the logits: `p - onehot(y)`.
fn ce_logit_seed(theta: &ParamVector, x: &Sample, y: usize) -> Result<Vec<f64>> {
    check_input(theta, x)?;
    check_label(theta, y)?;
    let logits = forward_trace(theta, &x.pixels).pop().expect("logits");
    let mut seed = softmax(&logits);
    seed[y] -= 1.0;
    Ok(seed)
}

/// Gradient of the loss with respect to every parameter.
pub fn grad_params(theta: &ParamVector, x: &Sample, y: usize) -> Result<Vec<f64>> {
    let seed = ce_logit_seed(theta, x, y)?;
    Ok(backward(theta, &x.pixels, &seed).0)
}

/// Gradient of the loss with respect to the input pixels.
pub fn grad_input(theta: &ParamVector, x: &Sample, y: usize) -> Result<Vec<f64>> {
    let seed = ce_logit_seed(theta, x, y)?;
    Ok(backward(theta, &x.pixels, &seed).1)
}

/// Gradient of `<f_theta(x), seed>` with respect to the parameters, where
/// `f` is the logit map. Linear in `seed`.
pub fn param_vjp(theta: &ParamVector, x: &Sample, seed: &[f64]) -> Result<Vec<f64>> {
    check_input(theta, x)?;
    if seed.len() != theta.arch.num_classes {
        return Err(Error::DimensionMismatch {
            what: "vjp seed",
            expected: theta.arch.num_classes,
            got: seed.len(),
        });
    }
    if !vecmath::all_finite(seed) {
        return Err(Error::Numerical("vjp seed contains non-finite entries".into()));
    }
    Ok(backward(theta, &x.pixels, seed).0)
}

/// [`param_vjp`] generalized over the output representation. For softmax
/// outputs the seed is pulled back through the softmax Jacobian first:
/// `s -> p .* (s - <p, s>)`.
pub fn output_vjp(
    theta: &ParamVector,
    x: &Sample,
    seed: &[f64],
    mode: OutputMode,
) -> Result<Vec<f64>> {
    match mode {
        OutputMode::Logits => param_vjp(theta, x, seed),
        OutputMode::Softmax => {
            check_input(theta, x)?;
            if seed.len() != theta.arch.num_classes {
                return Err(Error::DimensionMismatch {
                    what: "vjp seed",
                    expected: theta.arch.num_classes,
                    got: seed.len(),
                });
            }
            let logits = forward_trace(theta, &x.pixels).pop().expect("logits");
            let p = softmax(&logits);
            let ps = vecmath::dot(&p, seed);
            let pulled: Vec<f64> = p.iter().zip(seed).map(|(pi, si)| pi * (si - ps)).collect();
            param_vjp(theta, x, &pulled)
        }
    }
}

/// Optimizer selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// State for plain SGD or Adam with bias correction.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First moment (Adam only; empty for SGD).
    pub m: Vec<f64>,
    /// Second moment (Adam only; empty for SGD).
    pub v: Vec<f64>,
    /// Step counter; increments by exactly 1 per step.
    pub t: u64,
}

impl OptimizerState {
    pub fn sgd(step_size: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            step_size,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Adam with the standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam(step_size: f64, dim: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn new(kind: OptimizerKind, step_size: f64, dim: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(step_size),
            OptimizerKind::Adam => Self::adam(step_size, dim),
        }
    }

    /// Applies one update in place. SGD is `params -= lr * grad`; Adam uses
    /// bias-corrected moment estimates.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer gradient",
                expected: params.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.step_size * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::DimensionMismatch {
                        what: "adam moments",
                        expected: params.len(),
                        got: self.m.len(),
                    });
                }
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
        Ok(())
    }
}

/// Training hyperparameters. The seed is passed to [`train`] separately.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minimum training-set accuracy; falling short is an explicit error.
    pub acc_floor: f64,
}

/// Trains a classifier from scratch. `seed` drives both the parameter
/// initialization (exactly [`init_params`]) and the per-epoch shuffle
/// stream, so a fixed `(dataset, arch, cfg, seed)` reproduces the
/// checkpoint bit for bit. `epochs = 0` returns the initialization.
pub fn train(
    dataset: &[Sample],
    arch: &ArchSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ParamVector> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if cfg.lr <= 0.0 {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }

    let mut theta = init_params(arch, seed);
    let n_params = theta.values.len();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, n_params);
    // Separate stream so epochs = 0 returns init_params output exactly.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; n_params];
            for &i in batch {
                let s = &dataset[i];
                let g = grad_params(&theta, s, s.label)?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            opt.step(&mut theta.values, &grad)?;
        }
        if !vecmath::all_finite(&theta.values) {
            return Err(Error::Numerical(
                "training diverged: parameters became non-finite".into(),
            ));
        }
    }

    let train_acc = accuracy(&theta, dataset)?;
    if train_acc < cfg.acc_floor {
        return Err(Error::BelowAccuracyFloor {
            achieved: train_acc,
            floor: cfg.acc_floor,
        });
    }
    Ok(theta)
}

/// Fraction of samples whose argmax logit equals the label. Argmax ties
/// resolve to the lowest class index.
pub fn accuracy(theta: &ParamVector, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for s in dataset {
        let logits = forward(theta, s)?;
        let pred = argmax(&logits);
        if pred == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Lowest index attaining the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(input: usize, hidden: &[usize], classes: usize) -> ArchSpec {
        ArchSpec::new((input, 1, 1), hidden.to_vec(), classes, Activation::Tanh).unwrap()
    }

    fn sample(pixels: &[f64], label: usize) -> Sample {
        Sample::new(pixels.to_vec(), label).unwrap()
    }

    /// Central finite difference of the loss along parameter coordinate `i`.
    fn fd_loss_param(theta: &ParamVector, x: &Sample, y: usize, i: usize, h: f64) -> f64 {
        let mut plus = theta.values().to_vec();
        plus[i] += h;
        let mut minus = theta.values().to_vec();
        minus[i] -= h;
        let lp = loss(&theta.with_values(plus).unwrap(), x, y).unwrap();
        let lm = loss(&theta.with_values(minus).unwrap(), x, y).unwrap();
        (lp - lm) / (2.0 * h)
    }

    fn fd_loss_input(theta: &ParamVector, x: &Sample, y: usize, i: usize, h: f64) -> f64 {
        let mut plus = x.clone();
        plus.pixels[i] += h;
        let mut minus = x.clone();
        minus.pixels[i] -= h;
        let lp = loss(theta, &plus, y).unwrap();
        let lm = loss(theta, &minus, y).unwrap();
        (lp - lm) / (2.0 * h)
    }

    /// l2-relative error between analytic and FD values over a coordinate subset.
    fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = crate::vecmath::l2_norm(fd).max(1e-12);
        diff / scale
    }

    fn probe_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| rng.gen_range(0..n)).collect()
    }

    fn random_pixels(n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(4, &[3], 2);
        let p1 = init_params(&a, 99);
        let p2 = init_params(&a, 99);
        assert_eq!(p1.values(), p2.values());
        let p3 = init_params(&a, 100);
        assert_ne!(p1.values(), p3.values());
    }

    #[test]
    fn param_count_matches_hand_count() {
        // layers 4 -> 3 -> 2: (4+1)*3 + (3+1)*2 = 23
        let a = arch(4, &[3], 2);
        assert_eq!(a.param_count(), 23);
        assert_eq!(init_params(&a, 0).values().len(), 23);
    }

    #[test]
    fn init_biases_are_zero() {
        let a = arch(4, &[3], 2);
        let layers = unflatten(&init_params(&a, 7));
        for layer in layers {
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_weight_scale_tracks_fan_in() {
        let a = arch(100, &[200], 2);
        let layers = unflatten(&init_params(&a, 3));
        let std0: f64 = (layers[0].weights.iter().map(|w| w * w).sum::<f64>()
            / layers[0].weights.len() as f64)
            .sqrt();
        // fan_in = 100 -> std 0.1
        assert!((std0 - 0.1).abs() < 0.01, "std0 = {std0}");
    }

    #[test]
    fn forward_identity_weights() {
        let a = arch(2, &[], 2);
        // W = [[1,0],[0,1]], b = 0
        let theta = ParamVector::new(a, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let logits = forward(&theta, &sample(&[0.5, 0.25], 0)).unwrap();
        assert_eq!(logits, vec![0.5, 0.25]);
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let a = arch(3, &[2], 4);
        let theta = ParamVector::new(a.clone(), vec![0.0; a.param_count()]).unwrap();
        let logits = forward(&theta, &sample(&[0.1, 0.9, 0.4], 1)).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
    }

    #[test]
    fn forward_matches_independent_scalar_evaluation() {
        // 2-2-2 tanh network, parameters and input fixed by hand.
        let a = arch(2, &[2], 2);
        let w1 = [[0.3, -0.5], [0.8, 0.1]];
        let b1 = [0.05, -0.2];
        let w2 = [[1.1, -0.7], [0.4, 0.9]];
        let b2 = [0.0, 0.25];
        let values = vec![
            w1[0][0], w1[0][1], w1[1][0], w1[1][1], b1[0], b1[1], //
            w2[0][0], w2[0][1], w2[1][0], w2[1][1], b2[0], b2[1],
        ];
        let theta = ParamVector::new(a, values).unwrap();
        let x = [0.6, 0.35];

        // Independent evaluation, one scalar at a time.
        let h0 = (w1[0][0] * x[0] + w1[0][1] * x[1] + b1[0]).tanh();
        let h1 = (w1[1][0] * x[0] + w1[1][1] * x[1] + b1[1]).tanh();
        let z0 = w2[0][0] * h0 + w2[0][1] * h1 + b2[0];
        let z1 = w2[1][0] * h0 + w2[1][1] * h1 + b2[1];

        let logits = forward(&theta, &sample(&x, 0)).unwrap();
        assert!((logits[0] - z0).abs() < 1e-15);
        assert!((logits[1] - z1).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let a = arch(3, &[2], 2);
        let theta = init_params(&a, 0);
        let err = forward(&theta, &sample(&[0.1, 0.2], 0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn loss_uniform_logits_is_ln_k() {
        let a = arch(3, &[2], 4);
        let theta = ParamVector::new(a.clone(), vec![0.0; a.param_count()]).unwrap();
        let l = loss(&theta, &sample(&[0.3, 0.3, 0.3], 2), 2).unwrap();
        assert!((l - 4.0_f64.ln()).abs() < 1e-15);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn loss_saturated_true_class_is_near_zero_without_overflow() {
        // Single affine layer, zero weights, bias 1e4 on the true class:
        // logits magnitude 1e4 must stay finite under log-sum-exp.
        let a = arch(2, &[], 3);
        let mut values = vec![0.0; a.param_count()];
        values[6] = 1e4; // bias of class 0
        let theta = ParamVector::new(a, values).unwrap();
        let l = loss(&theta, &sample(&[0.5, 0.5], 0), 0).unwrap();
        assert!(l.is_finite());
        assert!(l.abs() < 1e-12, "loss = {l}");
    }

    #[test]
    fn loss_hand_computed_three_logits() {
        // logits [1,2,3], y = 0 -> 3 - 1 + ln(e^{-2} + e^{-1} + 1)
        let a = arch(3, &[], 3);
        // identity-free construction: zero weights, biases [1,2,3]
        let mut values = vec![0.0; a.param_count()];
        values[9] = 1.0;
        values[10] = 2.0;
        values[11] = 3.0;
        let theta = ParamVector::new(a, values).unwrap();
        let l = loss(&theta, &sample(&[0.0, 0.0, 0.0], 0), 0).unwrap();
        let expected = 3.0 - 1.0 + ((-2.0_f64).exp() + (-1.0_f64).exp() + 1.0).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 2.4076).abs() < 1e-4);
    }

    #[test]
    fn grad_params_matches_finite_differences() {
        let a = arch(6, &[5, 4], 3);
        for probe in 0..10u64 {
            let theta = init_params(&a, probe);
            let x = sample(&random_pixels(6, 1000 + probe), (probe % 3) as usize);
            let g = grad_params(&theta, &x, x.label).unwrap();
            let coords = probe_coords(g.len(), 10, 2000 + probe);
            let analytic: Vec<f64> = coords.iter().map(|&i| g[i]).collect();
            let fd: Vec<f64> = coords
                .iter()
                .map(|&i| fd_loss_param(&theta, &x, x.label, i, 1e-6))
                .collect();
            let err = rel_err(&analytic, &fd);
            assert!(err <= 1e-6, "probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn grad_params_is_bitwise_deterministic() {
        let a = arch(4, &[3], 2);
        let theta = init_params(&a, 5);
        let x = sample(&random_pixels(4, 50), 1);
        let g1 = grad_params(&theta, &x, 1).unwrap();
        let g2 = grad_params(&theta, &x, 1).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn grad_params_softmax_regression_closed_form() {
        // No hidden layer: weight-gradient row r is (p_r - 1{r=y}) * x,
        // bias gradient is p - onehot(y).
        let a = arch(4, &[], 3);
        let theta = init_params(&a, 11);
        let x = sample(&random_pixels(4, 60), 2);
        let y = 2;

        // Independent logits/probabilities from the unflattened view.
        let layers = unflatten(&theta);
        let l = &layers[0];
        let mut z = vec![0.0; 3];
        for r in 0..3 {
            z[r] = l.biases[r];
            for i in 0..4 {
                z[r] += l.weights[r * 4 + i] * x.pixels[i];
            }
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();

        let g = grad_params(&theta, &x, y).unwrap();
        for r in 0..3 {
            let coeff = p[r] - if r == y { 1.0 } else { 0.0 };
            for i in 0..4 {
                let expect = coeff * x.pixels[i];
                assert!((g[r * 4 + i] - expect).abs() < 1e-12);
            }
            assert!((g[12 + r] - coeff).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_input_matches_finite_differences() {
        let a = arch(5, &[4], 3);
        for probe in 0..10u64 {
            let theta = init_params(&a, 100 + probe);
            let pixels = random_pixels(5, 3000 + probe);
            let x = Sample {
                pixels,
                label: (probe % 3) as usize,
            };
            let g = grad_input(&theta, &x, x.label).unwrap();
            let fd: Vec<f64> = (0..5)
                .map(|i| fd_loss_input(&theta, &x, x.label, i, 1e-6))
                .collect();
            let err = rel_err(&g, &fd);
            assert!(err <= 1e-6, "probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn grad_input_zero_first_layer_weights() {
        let a = arch(4, &[3], 2);
        let mut values = init_params(&a, 0).into_values();
        // zero the first layer's weights (keep its biases and later layers)
        for v in values.iter_mut().take(12) {
            *v = 0.0;
        }
        let theta = ParamVector::new(a, values).unwrap();
        let g = grad_input(&theta, &sample(&[0.2, 0.4, 0.6, 0.8], 1), 1).unwrap();
        assert_eq!(g, vec![0.0; 4]);
    }

    #[test]
    fn grad_input_softmax_regression_closed_form() {
        // grad_x = W^T (p - onehot(y))
        let a = arch(4, &[], 3);
        let theta = init_params(&a, 21);
        let x = sample(&random_pixels(4, 70), 0);
        let y = 0;

        let layers = unflatten(&theta);
        let l = &layers[0];
        let logits = forward(&theta, &x).unwrap();
        let p = softmax(&logits);
        let mut expect = vec![0.0; 4];
        for r in 0..3 {
            let coeff = p[r] - if r == y { 1.0 } else { 0.0 };
            for i in 0..4 {
                expect[i] += l.weights[r * 4 + i] * coeff;
            }
        }
        let g = grad_input(&theta, &x, y).unwrap();
        for i in 0..4 {
            assert!((g[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn param_vjp_zero_seed_gives_zero() {
        let a = arch(4, &[3], 2);
        let theta = init_params(&a, 1);
        let g = param_vjp(&theta, &sample(&[0.1, 0.2, 0.3, 0.4], 0), &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0; theta.values().len()]);
    }

    #[test]
    fn param_vjp_is_linear_in_seed() {
        let a = arch(4, &[3], 2);
        let theta = init_params(&a, 2);
        let x = sample(&random_pixels(4, 80), 0);
        let s = [0.7, -1.3];
        let g = param_vjp(&theta, &x, &s).unwrap();
        let g_scaled = param_vjp(&theta, &x, &[2.5 * s[0], 2.5 * s[1]]).unwrap();
        for (a, b) in g.iter().zip(&g_scaled) {
            assert!((2.5 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn param_vjp_matches_finite_differences() {
        let a = arch(4, &[3], 2);
        let theta = init_params(&a, 31);
        let x = sample(&random_pixels(4, 90), 0);
        let s = [0.9, -0.4];
        let g = param_vjp(&theta, &x, &s).unwrap();

        let dot_fs = |values: Vec<f64>| {
            let th = theta.with_values(values).unwrap();
            let f = forward(&th, &x).unwrap();
            f[0] * s[0] + f[1] * s[1]
        };
        let coords = probe_coords(g.len(), 10, 500);
        let analytic: Vec<f64> = coords.iter().map(|&i| g[i]).collect();
        let fd: Vec<f64> = coords
            .iter()
            .map(|&i| {
                let mut plus = theta.values().to_vec();
                plus[i] += 1e-6;
                let mut minus = theta.values().to_vec();
                minus[i] -= 1e-6;
                (dot_fs(plus) - dot_fs(minus)) / 2e-6
            })
            .collect();
        assert!(rel_err(&analytic, &fd) <= 1e-6);
    }

    #[test]
    fn output_vjp_softmax_matches_finite_differences() {
        let a = arch(4, &[3], 3);
        let theta = init_params(&a, 41);
        let x = sample(&random_pixels(4, 95), 0);
        let s = [0.6, -0.2, 1.1];
        let g = output_vjp(&theta, &x, &s, OutputMode::Softmax).unwrap();

        let dot_fs = |values: Vec<f64>| {
            let th = theta.with_values(values).unwrap();
            let f = output(&th, &x, OutputMode::Softmax).unwrap();
            f.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()
        };
        let coords = probe_coords(g.len(), 10, 600);
        let analytic: Vec<f64> = coords.iter().map(|&i| g[i]).collect();
        let fd: Vec<f64> = coords
            .iter()
            .map(|&i| {
                let mut plus = theta.values().to_vec();
                plus[i] += 1e-6;
                let mut minus = theta.values().to_vec();
                minus[i] -= 1e-6;
                (dot_fs(plus) - dot_fs(minus)) / 2e-6
            })
            .collect();
        assert!(rel_err(&analytic, &fd) <= 1e-6);
    }

    #[test]
    fn sgd_step_hand_case() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut params = vec![1.0];
        opt.step(&mut params, &[2.0]).unwrap();
        assert_eq!(params, vec![0.8]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn sgd_zero_grad_leaves_params_unchanged() {
        let mut opt = OptimizerState::sgd(0.5);
        let mut params = vec![0.25, -1.5];
        let before = params.clone();
        opt.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut opt = OptimizerState::adam(0.001, 1);
        let mut params = vec![0.3];
        opt.step(&mut params, &[0.7]).unwrap();
        // bias-corrected first step: lr * g / (|g| + eps) ~ lr
        let step = (0.3 - params[0]).abs();
        assert!((step - 0.001).abs() < 1e-8, "step = {step}");
        assert!(params[0] < 0.3, "moves against the gradient");
    }

    #[test]
    fn adam_step_matches_hand_formula() {
        let (beta1, beta2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
        let g = -0.42;
        let mut opt = OptimizerState::adam(lr, 1);
        let mut params = vec![2.0];
        opt.step(&mut params, &[g]).unwrap();
        opt.step(&mut params, &[g]).unwrap();

        // replay two steps by hand
        let mut m = 0.0;
        let mut v = 0.0;
        let mut p = 2.0;
        for t in 1..=2 {
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1_pow(beta1, t));
            let v_hat = v / (1.0 - beta1_pow(beta2, t));
            p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((params[0] - p).abs() < 1e-15);
    }

    fn beta1_pow(beta: f64, t: i32) -> f64 {
        beta.powi(t)
    }

    #[test]
    fn optimizer_rejects_length_mismatch() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut params = vec![1.0, 2.0];
        assert!(matches!(
            opt.step(&mut params, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn separable_dataset() -> Vec<Sample> {
        // class 0 lives near (0,0), class 1 near (1,1)
        let mut data = Vec::new();
        for k in 0..8 {
            let t = k as f64 / 16.0;
            data.push(sample(&[t, t * 0.5], 0));
            data.push(sample(&[1.0 - t * 0.5, 1.0 - t], 1));
        }
        data
    }

    #[test]
    fn train_separable_toy_set_reaches_full_accuracy() {
        let a = arch(2, &[4], 2);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 0.05,
            epochs: 60,
            batch_size: 4,
            acc_floor: 1.0,
        };
        let data = separable_dataset();
        let theta = train(&data, &a, &cfg, 7).unwrap();
        assert_eq!(accuracy(&theta, &data).unwrap(), 1.0);
    }

    #[test]
    fn train_zero_epochs_returns_init() {
        let a = arch(2, &[4], 2);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            epochs: 0,
            batch_size: 4,
            acc_floor: 0.0,
        };
        let theta = train(&separable_dataset(), &a, &cfg, 13).unwrap();
        assert_eq!(theta.values(), init_params(&a, 13).values());
    }

    #[test]
    fn train_same_seed_is_bit_identical() {
        let a = arch(2, &[4], 2);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 0.05,
            epochs: 10,
            batch_size: 4,
            acc_floor: 0.0,
        };
        let data = separable_dataset();
        let t1 = train(&data, &a, &cfg, 3).unwrap();
        let t2 = train(&data, &a, &cfg, 3).unwrap();
        assert_eq!(t1.values(), t2.values());
    }

    #[test]
    fn train_reports_floor_violation() {
        let a = arch(2, &[4], 2);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 1e-9,
            epochs: 1,
            batch_size: 4,
            acc_floor: 1.1, // unattainable
        };
        let err = train(&separable_dataset(), &a, &cfg, 3).unwrap_err();
        assert!(matches!(err, Error::BelowAccuracyFloor { .. }));
    }

    #[test]
    fn accuracy_counting_cases() {
        let a = arch(2, &[], 2);
        // W rows: class 0 prefers pixel 0, class 1 prefers pixel 1
        let theta = ParamVector::new(a, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();

        // single correct sample
        assert_eq!(
            accuracy(&theta, &[sample(&[0.9, 0.1], 0)]).unwrap(),
            1.0
        );
        // every argmax wrong
        assert_eq!(
            accuracy(
                &theta,
                &[sample(&[0.9, 0.1], 1), sample(&[0.1, 0.9], 0)]
            )
            .unwrap(),
            0.0
        );
        // 3 of 4 correct
        let four = [
            sample(&[0.9, 0.1], 0),
            sample(&[0.8, 0.2], 0),
            sample(&[0.2, 0.8], 1),
            sample(&[0.7, 0.3], 1), // wrong
        ];
        assert_eq!(accuracy(&theta, &four).unwrap(), 0.75);
    }

    #[test]
    fn flatten_unflatten_round_trip_is_bitwise() {
        let a = arch(5, &[4, 3], 2);
        let theta = init_params(&a, 17);
        let rebuilt = flatten(&unflatten(&theta));
        assert_eq!(rebuilt, theta.values());
    }

    #[test]
    fn forward_and_loss_are_pure() {
        let a = arch(3, &[2], 2);
        let theta = init_params(&a, 19);
        let x = sample(&[0.3, 0.6, 0.9], 1);
        assert_eq!(
            forward(&theta, &x).unwrap(),
            forward(&theta, &x).unwrap()
        );
        assert_eq!(
            loss(&theta, &x, 1).unwrap().to_bits(),
            loss(&theta, &x, 1).unwrap().to_bits()
        );
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        let a = arch(2, &[], 2);
        let err = ParamVector::new(a, vec![1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn arch_allows_softmax_regression() {
        let a = ArchSpec::new((4, 1, 1), vec![], 3, Activation::Tanh).unwrap();
        assert_eq!(a.layer_dims(), vec![(4, 3)]);
        assert_eq!(a.param_count(), 15);
    }

    #[test]
    fn arch_rejects_degenerate_shapes() {
        assert!(ArchSpec::new((0, 1, 1), vec![2], 2, Activation::Tanh).is_err());
        assert!(ArchSpec::new((2, 2, 1), vec![2], 1, Activation::Tanh).is_err());
        assert!(ArchSpec::new((2, 2, 1), vec![0], 2, Activation::Tanh).is_err());
    }
}
