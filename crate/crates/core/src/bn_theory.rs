//! Batch normalization of a single unit viewed as a reparameterized weight.
//!
//! Under the zero-mean input convention a BN unit computes
//! `y = γ·xᵀw / (wᵀRw)^½`, i.e. a linear unit with effective weight
//! `w_bn = γ·w / (wᵀRw)^½`. That weight is the minimizer of
//! `(wᵀRw)^½ ‖w_bn‖²` subject to `w_bnᵀw = 1`, which makes `(wᵀRw)^½` a
//! data-dependent regularization rate. The functions here evaluate each piece
//! of that argument directly so they can be cross-checked numerically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, quad_form, Matrix, SymEigen, Vector, PSD_CLAMP};

/// Scale, shift and variance floor of one BN unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl BnParams {
    pub fn new(gamma: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if !gamma.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("gamma and beta must be finite"));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(BnParams { gamma, beta, epsilon })
    }
}

impl Default for BnParams {
    fn default() -> Self {
        BnParams {
            gamma: 1.0,
            beta: 0.0,
            epsilon: 0.0,
        }
    }
}

/// Solution of the constrained minimization for a fixed non-BN weight `w`.
#[derive(Clone, Debug)]
pub struct LagrangianPoint {
    pub w_bn: Vector,
    /// Multiplier at which [`lagrangian_grad`] vanishes.
    pub alpha_b: f64,
    /// `|w_bnᵀw − 1|`.
    pub constraint_residual: f64,
}

/// Normalizes a batch of pre-activations with its own mean and
/// (divide-by-n) variance.
pub fn bn_forward_batch(xw: &[f64], p: &BnParams) -> Result<Vector> {
    let n = xw.len();
    if n < 2 {
        return Err(Error::invalid(format!("batch normalization needs n >= 2, got {n}")));
    }
    let mean = xw.iter().sum::<f64>() / n as f64;
    let var = xw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Ok(bn_forward_with_stats(xw, mean, var, p))
}

/// Normalizes with externally supplied statistics (population or running).
pub fn bn_forward_with_stats(xw: &[f64], mean: f64, var: f64, p: &BnParams) -> Vector {
    let denom = (var + p.epsilon).sqrt();
    if denom == 0.0 {
        return Vector::new(vec![p.beta; xw.len()]);
    }
    xw.iter()
        .map(|x| p.gamma * (x - mean) / denom + p.beta)
        .collect::<Vec<_>>()
        .into()
}

fn positive_quad(w: &[f64], r: &Matrix) -> Result<f64> {
    let q = quad_form(w, r)?;
    if !(q > 0.0) {
        return Err(Error::DegenerateDirection(q));
    }
    Ok(q)
}

/// Effective weight `γ·w / (wᵀRw)^½` of a BN unit.
pub fn bn_weight(w: &[f64], r: &Matrix, gamma: f64) -> Result<Vector> {
    let q = positive_quad(w, r)?;
    let s = gamma / q.sqrt();
    Ok(w.iter().map(|x| s * x).collect::<Vec<_>>().into())
}

/// Regularization rate `[ (1/n) Σᵢ (wᵀxᵢ)² ]^½` estimated from samples.
pub fn alpha_bn(w: &[f64], samples: &Matrix) -> Result<f64> {
    let (n, d) = samples.shape();
    if n == 0 {
        return Err(Error::invalid("alpha_bn needs at least one sample"));
    }
    if d != w.len() {
        return Err(Error::dims(d, w.len()));
    }
    let ms = (0..n)
        .map(|i| {
            let p = dot(samples.row(i), w);
            p * p
        })
        .sum::<f64>()
        / n as f64;
    Ok(ms.sqrt())
}

/// Multiplier `(wᵀRw)^½ / ‖w‖²` for which `α_b·w/(wᵀRw)^½` satisfies
/// `w_bnᵀw = 1`.
pub fn constraint_alpha(w: &[f64], r: &Matrix) -> Result<f64> {
    let nsq = dot(w, w);
    if nsq == 0.0 {
        return Err(Error::invalid("constraint_alpha needs a non-zero w"));
    }
    let q = positive_quad(w, r)?;
    Ok(q.sqrt() / nsq)
}

/// Constraint-satisfying minimizer of `(wᵀRw)^½ ‖w_bn‖² − α(w_bnᵀw − 1)`.
///
/// The effective weight is `constraint_alpha · w / (wᵀRw)^½`. Because the
/// objective is quadratic in `w_bn`, its true gradient carries a factor 2, so
/// the multiplier at the stationary point is `2 · constraint_alpha`.
pub fn constrained_minimizer(w: &[f64], r: &Matrix) -> Result<LagrangianPoint> {
    let a = constraint_alpha(w, r)?;
    let q = quad_form(w, r)?;
    let s = a / q.sqrt();
    let w_bn: Vector = w.iter().map(|x| s * x).collect::<Vec<_>>().into();
    let constraint_residual = (w_bn.dot(w) - 1.0).abs();
    Ok(LagrangianPoint {
        w_bn,
        alpha_b: 2.0 * a,
        constraint_residual,
    })
}

fn check_lagrangian_dims(w_bn: &[f64], w: &[f64], r: &Matrix) -> Result<f64> {
    if w_bn.len() != w.len() {
        return Err(Error::dims(w.len(), w_bn.len()));
    }
    let q = quad_form(w, r)?;
    if q < PSD_CLAMP {
        return Err(Error::NotPsd { eigenvalue: q });
    }
    Ok(q.max(0.0))
}

/// `(wᵀRw)^½ · w_bnᵀw_bn − α_b·(w_bnᵀw − 1)`.
pub fn lagrangian_value(w_bn: &[f64], w: &[f64], r: &Matrix, alpha_b: f64) -> Result<f64> {
    let q = check_lagrangian_dims(w_bn, w, r)?;
    Ok(q.sqrt() * dot(w_bn, w_bn) - alpha_b * (dot(w_bn, w) - 1.0))
}

/// Gradient of [`lagrangian_value`] with respect to `w_bn`:
/// `2(wᵀRw)^½ w_bn − α_b w`.
pub fn lagrangian_grad(w_bn: &[f64], w: &[f64], r: &Matrix, alpha_b: f64) -> Result<Vector> {
    let q = check_lagrangian_dims(w_bn, w, r)?;
    let two_s = 2.0 * q.sqrt();
    Ok(w_bn
        .iter()
        .zip(w)
        .map(|(b, x)| two_s * b - alpha_b * x)
        .collect::<Vec<_>>()
        .into())
}

/// Stationary point `(α_b/2)·w/(wᵀRw)^½` of the Lagrangian for a given
/// multiplier.
pub fn lagrangian_stationary_point(w: &[f64], r: &Matrix, alpha_b: f64) -> Result<Vector> {
    let q = positive_quad(w, r)?;
    let s = 0.5 * alpha_b / q.sqrt();
    Ok(w.iter().map(|x| s * x).collect::<Vec<_>>().into())
}

/// L2-regularized weight `Q·diag(λᵢ/(λᵢ+α))·Qᵀ·w`. Each eigendirection is
/// shrunk by `λᵢ/(λᵢ+α)`; `α = 0` leaves `w` unchanged.
pub fn l2_spectral_rescale(w: &[f64], eig: &SymEigen, alpha: f64) -> Result<Vector> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if let Some(&l) = eig.lambda.iter().find(|&&l| l < PSD_CLAMP) {
        return Err(Error::NotPsd { eigenvalue: l });
    }
    let mut coeffs = eig.coefficients(w)?;
    if alpha > 0.0 {
        for (c, &l) in coeffs.iter_mut().zip(eig.lambda.iter()) {
            let l = l.max(0.0);
            *c *= l / (l + alpha);
        }
    }
    eig.q.matvec(&coeffs)
}

/// `Σᵢ λᵢ (qᵢᵀw)²`, the quadratic form `wᵀRw` expanded in the eigenbasis.
pub fn eigen_quadratic_form(w: &[f64], eig: &SymEigen) -> Result<f64> {
    let coeffs = eig.coefficients(w)?;
    Ok(coeffs.iter().zip(eig.lambda.iter()).map(|(c, l)| l * c * c).sum())
}

/// Covariance of `x + ξ` for `ξ ~ N(0, σ²I)` independent of `x`: `R + σ²I`.
pub fn noisy_covariance(r: &Matrix, sigma_sq: f64) -> Result<Matrix> {
    if !(sigma_sq >= 0.0) {
        return Err(Error::invalid(format!("noise variance must be >= 0, got {sigma_sq}")));
    }
    if !r.is_square() {
        return Err(Error::invalid("covariance must be square"));
    }
    let mut out = r.clone();
    for i in 0..r.rows() {
        out[(i, i)] += sigma_sq;
    }
    Ok(out)
}

/// Excess squared error `σ²‖w‖²` that input noise adds to a linear model.
pub fn noise_regularization_term(w: &[f64], sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq >= 0.0) {
        return Err(Error::invalid(format!("noise variance must be >= 0, got {sigma_sq}")));
    }
    Ok(sigma_sq * dot(w, w))
}

/// `σ²γ²/(λ+σ²)`: the noise-induced penalty on a BN weight when all signal
/// eigenvalues equal `λ`. Tends to `γ²` for `σ² ≫ λ` and to `σ²γ²/λ` for
/// `σ² ≪ λ`.
pub fn bn_noise_reg_coefficient(gamma: f64, lambda_sig: f64, sigma_sq: f64) -> Result<f64> {
    if !(lambda_sig >= 0.0) || !(sigma_sq >= 0.0) {
        return Err(Error::invalid("signal and noise variances must be >= 0"));
    }
    if lambda_sig + sigma_sq == 0.0 {
        return Err(Error::invalid("signal and noise variances cannot both be zero"));
    }
    Ok(sigma_sq * gamma * gamma / (lambda_sig + sigma_sq))
}

/// Empirical check of `E[(y_n − y)²] = σ²‖w‖²` for a linear teacher equal to
/// the student. Returns `(empirical, predicted)`.
pub fn mse_decomposition_check(w: &[f64], r: &Matrix, sigma_sq: f64, n_trials: usize, seed: u64) -> Result<(f64, f64)> {
    if n_trials < 10_000 {
        return Err(Error::invalid(format!("need at least 1e4 trials, got {n_trials}")));
    }
    if r.rows() != w.len() {
        return Err(Error::dims(w.len(), r.rows()));
    }
    let rhs = noise_regularization_term(w, sigma_sq)?;
    let b = linalg::matrix_sqrt(r)?;
    let sigma = sigma_sq.sqrt();
    let d = w.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut xn = vec![0.0; d];
    let mut sum = 0.0;
    for _ in 0..n_trials {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = dot(b.row(i), &z);
        }
        for (xni, xi) in xn.iter_mut().zip(&x) {
            let e: f64 = rng.sample(StandardNormal);
            *xni = xi + sigma * e;
        }
        let gap = dot(w, &xn) - dot(w, &x);
        sum += gap * gap;
    }
    Ok((sum / n_trials as f64, rhs))
}
