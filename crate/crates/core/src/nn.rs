//! One-hidden-layer perceptron with batch normalization after each dense
//! layer, trained with softmax cross-entropy and Adam.
//!
//! `Dense → BN → ReLU → Dense → BN → Softmax`
//!
//! Backpropagation is exact through the batch mean and variance. Everything
//! runs single-threaded in a fixed order, so a run is bit-reproducible from
//! its seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bn_theory;
use crate::data::{Dataset, IMAGE_PIXELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_tn, Matrix, Vector};

pub const HIDDEN_UNITS: usize = 300;

/// Layer widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub const MNIST: MlpShape = MlpShape {
        input: IMAGE_PIXELS,
        hidden: HIDDEN_UNITS,
        classes: NUM_CLASSES,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub init_std: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 10,
            lr: 0.1,
            seed: 42,
            init_std: 0.05,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(Error::invalid("init_std must be finite and >= 0"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::invalid("bn_momentum must be in (0, 1]"));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::invalid("bn_epsilon must be > 0"));
        }
        Ok(())
    }

    /// `key=value` pairs describing the configuration.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("init_std".into(), self.init_std.to_string()),
            ("bn_momentum".into(), self.bn_momentum.to_string()),
            ("bn_epsilon".into(), self.bn_epsilon.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `[in × out]`; column `j` is the incoming weight vector of unit `j`.
    pub weights: Matrix,
    pub bias: Vector,
}

impl DenseLayer {
    fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.weights.cols());
        for i in 0..z.rows() {
            z.row_mut(i).copy_from_slice(&self.bias);
        }
        gemm_nn(x, &self.weights, &mut z);
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vector,
    pub beta: Vector,
    pub running_mean: Vector,
    pub running_var: Vector,
    pub epsilon: f64,
    /// Weight of the old running value: `r ← momentum·r + (1 − momentum)·batch`.
    pub momentum: f64,
}

/// Per-feature quantities saved by a train-mode BN pass.
#[derive(Clone, Debug)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

struct BatchStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(width: usize, epsilon: f64, momentum: f64) -> Self {
        BatchNormLayer {
            gamma: Vector::new(vec![1.0; width]),
            beta: Vector::zeros(width),
            running_mean: Vector::zeros(width),
            running_var: Vector::new(vec![1.0; width]),
            epsilon,
            momentum,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.dim()
    }

    fn forward_train(&self, z: &Matrix) -> (Matrix, BnCache, BatchStats) {
        let (n, k) = z.shape();
        let inv_n = 1.0 / n as f64;
        let mut mean = vec![0.0; k];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(z.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![0.0; k];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(z.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut xhat = Matrix::zeros(n, k);
        let mut y = Matrix::zeros(n, k);
        for i in 0..n {
            let zr = z.row(i);
            let xr = xhat.row_mut(i);
            for j in 0..k {
                xr[j] = (zr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(i);
            let xr = xhat.row(i);
            for j in 0..k {
                yr[j] = self.gamma[j] * xr[j] + self.beta[j];
            }
        }
        (y, BnCache { xhat, inv_std }, BatchStats { mean, var })
    }

    fn forward_eval(&self, z: &Matrix) -> Matrix {
        let (n, k) = z.shape();
        let scale: Vec<f64> = (0..k)
            .map(|j| self.gamma[j] / (self.running_var[j] + self.epsilon).sqrt())
            .collect();
        let mut y = Matrix::zeros(n, k);
        for i in 0..n {
            let zr = z.row(i);
            let yr = y.row_mut(i);
            for j in 0..k {
                yr[j] = scale[j] * (zr[j] - self.running_mean[j]) + self.beta[j];
            }
        }
        y
    }

    fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for j in 0..self.width() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * stats.mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * stats.var[j];
        }
    }

    /// Returns `(dz, dγ, dβ)` for upstream gradient `dy`.
    fn backward(&self, dy: &Matrix, cache: &BnCache) -> (Matrix, Vector, Vector) {
        let (n, k) = dy.shape();
        let mut dgamma = vec![0.0; k];
        let mut dbeta = vec![0.0; k];
        for i in 0..n {
            let dr = dy.row(i);
            let xr = cache.xhat.row(i);
            for j in 0..k {
                dgamma[j] += dr[j] * xr[j];
                dbeta[j] += dr[j];
            }
        }
        // with dxhat = γ·dy: Σ dxhat = γ·dβ and Σ dxhat·xhat = γ·dγ
        let nf = n as f64;
        let mut dz = Matrix::zeros(n, k);
        for i in 0..n {
            let dr = dy.row(i);
            let xr = cache.xhat.row(i);
            let out = dz.row_mut(i);
            for j in 0..k {
                let g = self.gamma[j];
                out[j] = g * cache.inv_std[j] / nf * (nf * dr[j] - dbeta[j] - xr[j] * dgamma[j]);
            }
        }
        (dz, dgamma.into(), dbeta.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The network. `generation` counts parameter updates so that a cache from
/// an earlier forward pass cannot be used for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: DenseLayer,
    pub hidden_bn: BatchNormLayer,
    pub output: DenseLayer,
    pub output_bn: BatchNormLayer,
    generation: u64,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    mode: Mode,
    generation: u64,
    input: Matrix,
    hidden_bn: Option<BnCache>,
    hidden_pre_relu: Matrix,
    hidden_act: Matrix,
    output_bn: Option<BnCache>,
    probs: Matrix,
}

impl ForwardCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    /// Post-BN, pre-ReLU hidden activations.
    pub fn hidden_normalized(&self) -> &Matrix {
        &self.hidden_pre_relu
    }
}

/// Gradients of the mean cross-entropy, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub hidden_weights: Matrix,
    pub hidden_bias: Vector,
    pub hidden_gamma: Vector,
    pub hidden_beta: Vector,
    pub output_weights: Matrix,
    pub output_bias: Vector,
    pub output_gamma: Vector,
    pub output_beta: Vector,
}

pub const PARAM_NAMES: [&str; 8] = [
    "hidden.weights",
    "hidden.bias",
    "hidden_bn.gamma",
    "hidden_bn.beta",
    "output.weights",
    "output.bias",
    "output_bn.gamma",
    "output_bn.beta",
];

impl Gradients {
    pub fn slices(&self) -> [&[f64]; 8] {
        [
            self.hidden_weights.data(),
            &self.hidden_bias,
            &self.hidden_gamma,
            &self.hidden_beta,
            self.output_weights.data(),
            &self.output_bias,
            &self.output_gamma,
            &self.output_beta,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// The MNIST-sized network `784 → 300 → 10`.
pub fn init_mlp(cfg: &TrainConfig) -> Mlp {
    Mlp::new(MlpShape::MNIST, cfg)
}

impl Mlp {
    /// Gaussian `N(0, init_std²)` weights from the seed, zero biases, γ = 1,
    /// β = 0.
    pub fn new(shape: MlpShape, cfg: &TrainConfig) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gaussian = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| cfg.init_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::from_raw(rows, cols, data)
        };
        let w1 = gaussian(shape.input, shape.hidden);
        let w2 = gaussian(shape.hidden, shape.classes);
        Mlp {
            hidden: DenseLayer {
                weights: w1,
                bias: Vector::zeros(shape.hidden),
            },
            hidden_bn: BatchNormLayer::new(shape.hidden, cfg.bn_epsilon, cfg.bn_momentum),
            output: DenseLayer {
                weights: w2,
                bias: Vector::zeros(shape.classes),
            },
            output_bn: BatchNormLayer::new(shape.classes, cfg.bn_epsilon, cfg.bn_momentum),
            generation: 0,
        }
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input: self.hidden.weights.rows(),
            hidden: self.hidden.weights.cols(),
            classes: self.output.weights.cols(),
        }
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.hidden.weights.data_mut(),
            &mut self.hidden.bias,
            &mut self.hidden_bn.gamma,
            &mut self.hidden_bn.beta,
            self.output.weights.data_mut(),
            &mut self.output.bias,
            &mut self.output_bn.gamma,
            &mut self.output_bn.beta,
        ]
    }

    pub fn param_sizes(&self) -> [usize; 8] {
        let s = self.shape();
        [
            s.input * s.hidden,
            s.hidden,
            s.hidden,
            s.hidden,
            s.hidden * s.classes,
            s.classes,
            s.classes,
            s.classes,
        ]
    }

    /// Marks the parameters as changed, invalidating earlier caches.
    pub fn touch(&mut self) {
        self.generation += 1;
    }

    /// Forward pass without side effects. In train mode the batch statistics
    /// are used and returned alongside the cache.
    fn forward_pure(&self, batch: &Matrix, mode: Mode) -> Result<(ForwardCache, Option<[BatchStats; 2]>)> {
        let shape = self.shape();
        if batch.cols() != shape.input {
            return Err(Error::dims(shape.input, batch.cols()));
        }
        if mode == Mode::Train && batch.rows() < 2 {
            return Err(Error::invalid("train-mode forward needs a batch of at least 2 rows"));
        }
        let z1 = self.hidden.forward(batch);
        let (y1, c1, s1) = match mode {
            Mode::Train => {
                let (y, c, s) = self.hidden_bn.forward_train(&z1);
                (y, Some(c), Some(s))
            }
            Mode::Eval => (self.hidden_bn.forward_eval(&z1), None, None),
        };
        let mut a1 = y1.clone();
        a1.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let z2 = self.output.forward(&a1);
        let (logits, c2, s2) = match mode {
            Mode::Train => {
                let (y, c, s) = self.output_bn.forward_train(&z2);
                (y, Some(c), Some(s))
            }
            Mode::Eval => (self.output_bn.forward_eval(&z2), None, None),
        };
        let probs = softmax_rows(&logits);
        let stats = match (s1, s2) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };
        Ok((
            ForwardCache {
                mode,
                generation: self.generation,
                input: batch.clone(),
                hidden_bn: c1,
                hidden_pre_relu: y1,
                hidden_act: a1,
                output_bn: c2,
                probs,
            },
            stats,
        ))
    }

    /// Forward pass. Train mode normalizes with batch statistics and folds
    /// them into the running averages; eval mode uses the running averages.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        let (cache, stats) = self.forward_pure(batch, mode)?;
        if let Some([s1, s2]) = stats {
            self.hidden_bn.update_running(&s1);
            self.output_bn.update_running(&s2);
        }
        Ok((cache.probs.clone(), cache))
    }

    /// Eval-mode class probabilities; a per-sample function of the input.
    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_pure(batch, Mode::Eval)?.0.probs)
    }

    /// Post-BN (pre-ReLU) hidden activations of a train-mode pass, without
    /// touching the running statistics.
    pub fn hidden_activations(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_pure(batch, Mode::Train)?.0.hidden_pre_relu)
    }

    /// Mean cross-entropy of a train-mode pass, without side effects.
    pub fn train_loss(&self, batch: &Matrix, labels: &Matrix) -> Result<f64> {
        let (cache, _) = self.forward_pure(batch, Mode::Train)?;
        cross_entropy(&cache.probs, labels)
    }

    /// Gradients of the mean cross-entropy for the pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, labels: &Matrix) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::State("backward needs a train-mode forward cache".into()));
        }
        if cache.generation != self.generation {
            return Err(Error::State(format!(
                "cache from parameter generation {} used at generation {}",
                cache.generation, self.generation
            )));
        }
        let (n, c) = cache.probs.shape();
        if labels.shape() != (n, c) {
            return Err(Error::dims(format!("{n}x{c} labels"), format!("{:?}", labels.shape())));
        }
        let (Some(c1), Some(c2)) = (&cache.hidden_bn, &cache.output_bn) else {
            return Err(Error::State("cache is missing batch-norm state".into()));
        };

        let inv_n = 1.0 / n as f64;
        let mut dlogits = cache.probs.clone();
        for (d, &t) in dlogits.data_mut().iter_mut().zip(labels.data()) {
            *d = (*d - t) * inv_n;
        }
        let (dz2, output_gamma, output_beta) = self.output_bn.backward(&dlogits, c2);
        let output_bias = column_sums(&dz2);
        let mut output_weights = Matrix::zeros(self.output.weights.rows(), self.output.weights.cols());
        gemm_tn(&cache.hidden_act, &dz2, &mut output_weights);

        let mut dy1 = dz2.matmul_t(&self.output.weights)?;
        for (d, &pre) in dy1.data_mut().iter_mut().zip(cache.hidden_pre_relu.data()) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        let (dz1, hidden_gamma, hidden_beta) = self.hidden_bn.backward(&dy1, c1);
        let hidden_bias = column_sums(&dz1);
        let mut hidden_weights = Matrix::zeros(self.hidden.weights.rows(), self.hidden.weights.cols());
        gemm_tn(&cache.input, &dz1, &mut hidden_weights);

        Ok(Gradients {
            hidden_weights,
            hidden_bias,
            hidden_gamma,
            hidden_beta,
            output_weights,
            output_bias,
            output_gamma,
            output_beta,
        })
    }

    /// Applies one Adam update and invalidates outstanding caches.
    pub fn adam_step(&mut self, grads: &Gradients, state: &mut AdamState) -> Result<()> {
        let mut params = self.param_slices_mut();
        adam_step(&mut params, &grads.slices(), state)?;
        self.touch();
        Ok(())
    }

    /// Eval-mode accuracy on a dataset, evaluated in chunks.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy of an empty dataset"));
        }
        let classes = data.classes();
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(1000) {
            let idx: Vec<usize> = (start..(start + 1000).min(data.len())).collect();
            let probs = self.predict_proba(&data.select(&idx).images)?;
            correct += (0..idx.len())
                .filter(|&i| argmax(probs.row(i)) == classes[idx[i]])
                .count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

fn column_sums(m: &Matrix) -> Vector {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, &v) in s.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    s.into()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Mean categorical cross-entropy against one-hot targets.
pub fn cross_entropy(probs: &Matrix, labels: &Matrix) -> Result<f64> {
    if probs.shape() != labels.shape() {
        return Err(Error::dims(
            format!("{:?}", probs.shape()),
            format!("{:?}", labels.shape()),
        ));
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Adam optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn for_mlp(m: &Mlp, lr: f64) -> Self {
        AdamState::new(lr, &m.param_sizes())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::dims(
            format!("{} tensors", state.m.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[k].len() || g.len() != state.m[k].len() {
            return Err(Error::dims(
                format!("tensor {k} of {} entries", state.m[k].len()),
                format!("{} params / {} grads", p.len(), g.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    /// Mean train-mode loss of the untrained model over the training set.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// CSV with header `epoch,train_loss,train_acc,test_acc`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        w.write_record(["epoch", "train_loss", "train_acc", "test_acc"])
            .map_err(csv_err)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.test_acc.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.test_acc)
    }
}

/// Mini-batch training with seeded shuffling. The last incomplete batch of
/// each epoch is dropped. `test`, when given, is scored after every epoch.
pub fn train(mut m: Mlp, data: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Mlp, History)> {
    cfg.validate()?;
    let n = data.len();
    if n < cfg.batch_size {
        return Err(Error::invalid(format!(
            "{n} samples is fewer than one batch of {}",
            cfg.batch_size
        )));
    }
    if data.dim() != m.shape().input {
        return Err(Error::dims(m.shape().input, data.dim()));
    }
    let batches = n / cfg.batch_size;

    let mut initial = 0.0;
    for b in 0..batches {
        let idx: Vec<usize> = (b * cfg.batch_size..(b + 1) * cfg.batch_size).collect();
        let batch = data.select(&idx);
        initial += m.train_loss(&batch.images, &batch.labels)?;
    }
    let initial_loss = initial / batches as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let classes = data.classes();
    let mut adam = AdamState::for_mlp(&m, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch = data.select(chunk);
            let (probs, cache) = m.forward(&batch.images, Mode::Train)?;
            loss_sum += cross_entropy(&probs, &batch.labels)?;
            correct += chunk
                .iter()
                .enumerate()
                .filter(|&(i, &s)| argmax(probs.row(i)) == classes[s])
                .count();
            let grads = m.backward(&cache, &batch.labels)?;
            m.adam_step(&grads, &mut adam)?;
        }
        let test_acc = test.map(|t| m.accuracy(t)).transpose()?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / (batches * cfg.batch_size) as f64,
            test_acc,
        });
    }
    Ok((
        m,
        History {
            initial_loss,
            epochs: records,
        },
    ))
}

/// L1 and L2 norms of every hidden unit's incoming weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub per_node_l1: Vec<f64>,
    pub per_node_l2: Vec<f64>,
}

pub fn weight_norm_stats(m: &Mlp) -> NormStats {
    let w = &m.hidden.weights;
    let (rows, units) = w.shape();
    let mut l1 = vec![0.0; units];
    let mut sq = vec![0.0; units];
    for i in 0..rows {
        for (j, &x) in w.row(i).iter().enumerate() {
            l1[j] += x.abs();
            sq[j] += x * x;
        }
    }
    let l2: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    NormStats {
        mean_l1: mean(&l1),
        mean_l2: mean(&l2),
        per_node_l1: l1,
        per_node_l2: l2,
    }
}

/// Regularization rate `α_j = [mean_i (w_jᵀx_i)²]^½` of every hidden unit
/// over the given inputs.
pub fn per_node_alpha(m: &Mlp, data: &Dataset) -> Result<Vector> {
    if data.is_empty() {
        return Err(Error::invalid("per_node_alpha needs data"));
    }
    let w = &m.hidden.weights;
    if data.dim() != w.rows() {
        return Err(Error::dims(w.rows(), data.dim()));
    }
    let units = w.cols();
    let mut sq = vec![0.0; units];
    for start in (0..data.len()).step_by(1024) {
        let idx: Vec<usize> = (start..(start + 1024).min(data.len())).collect();
        let x = data.select(&idx).images;
        let mut z = Matrix::zeros(x.rows(), units);
        gemm_nn(&x, w, &mut z);
        for i in 0..z.rows() {
            for (s, &v) in sq.iter_mut().zip(z.row(i)) {
                *s += v * v;
            }
        }
    }
    let n = data.len() as f64;
    Ok(sq.iter().map(|s| (s / n).sqrt()).collect::<Vec<_>>().into())
}

/// [`per_node_alpha`] computed unit by unit through
/// [`bn_theory::alpha_bn`]; slower, used for cross-checking.
pub fn per_node_alpha_reference(m: &Mlp, data: &Dataset) -> Result<Vector> {
    let w = &m.hidden.weights;
    (0..w.cols())
        .map(|j| bn_theory::alpha_bn(&w.col(j), &data.images))
        .collect::<Result<Vec<_>>>()
        .map(Vector::from)
}

/// Worst relative disagreement between backpropagated and central-difference
/// gradients for each parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(&'static str, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`. The floor keeps
/// gradients that are zero up to rounding (dense biases feeding BN) from
/// producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares [`Mlp::backward`] against central finite differences of the
/// train-mode loss on every parameter.
pub fn grad_check(m: &Mlp, batch: &Matrix, labels: &Matrix, step: f64) -> Result<GradCheckReport> {
    let mut probe = m.clone();
    let (_, cache) = probe.forward(batch, Mode::Train)?;
    let analytic = probe.backward(&cache, labels)?;
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();

    let mut work = m.clone();
    let mut per_param = Vec::with_capacity(PARAM_NAMES.len());
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let mut worst = 0.0_f64;
        for (i, &a) in analytic[k].iter().enumerate() {
            let orig = work.param_slices_mut()[k][i];
            work.param_slices_mut()[k][i] = orig + step;
            let up = work.train_loss(batch, labels)?;
            work.param_slices_mut()[k][i] = orig - step;
            let down = work.train_loss(batch, labels)?;
            work.param_slices_mut()[k][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(a, numeric, GRAD_CHECK_FLOOR));
        }
        per_param.push((*name, worst));
    }
    Ok(GradCheckReport { per_param })
}
