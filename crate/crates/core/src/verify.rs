//! Numerical property suite run by `bn-lens verify`. Every property is
//! evaluated on seeded synthetic instances and reported as a measured error
//! against a fixed tolerance.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bn_theory::{self, BnParams};
use crate::data;
use crate::error::Result;
use crate::linalg::{self, Matrix, Vector};
use crate::nn::{self, Mlp, MlpShape, TrainConfig};

/// One measured property.
#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: &'static str,
    pub err: f64,
    pub tol: f64,
}

impl Property {
    pub fn passed(&self) -> bool {
        self.err.is_finite() && self.err <= self.tol
    }
}

impl fmt::Display for Property {
    /// `PROP <name> err=<v> tol=<t> <PASS|FAIL>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PROP {} err={:e} tol={:e} {}",
            self.name,
            self.err,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn random_vector(rng: &mut impl Rng, d: usize) -> Vector {
    (0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>().into()
}

/// `GGᵀ/d + 0.1·I` for a Gaussian `G`: symmetric, positive definite, O(1)
/// entries.
pub fn random_spd(rng: &mut impl Rng, d: usize) -> Matrix {
    let g =
        Matrix::new(d, d, (0..d * d).map(|_| rng.sample(StandardNormal)).collect()).expect("finite gaussian entries");
    let mut a = g.matmul_t(&g).expect("square").scaled(1.0 / d as f64);
    for i in 0..d {
        a[(i, i)] += 0.1;
    }
    a.symmetrize();
    a
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

/// Runs the suite. `tol_scale` multiplies every tolerance (1 for normal use).
pub fn run_suite(tol_scale: f64) -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut props = Vec::new();
    let mut push = |name, err, tol: f64| {
        props.push(Property {
            name,
            err,
            tol: tol * tol_scale,
        })
    };

    // BN forward with population statistics vs. effective weight
    {
        let d = 8;
        let r = random_spd(&mut rng, d);
        let ds = data::synthetic_gaussian(10_000, d, &r, 1)?;
        let w = random_vector(&mut rng, d);
        let gamma = 1.7;
        let w_bn = bn_theory::bn_weight(&w, &r, gamma)?;
        let xw = ds.images.matvec(&w)?;
        let p = BnParams::new(gamma, 0.0, 0.0)?;
        let y = bn_theory::bn_forward_with_stats(&xw, 0.0, linalg::quad_form(&w, &r)?, &p);
        let direct = ds.images.matvec(&w_bn)?;
        push("bn_forward_equals_effective_weight", y.sub(&direct).max_abs(), 1e-10);
    }

    let mut stat = 0.0_f64;
    let mut feasibility = 0.0_f64;
    let mut fd = 0.0_f64;
    let mut norm = 0.0_f64;
    let mut scale = 0.0_f64;
    for _ in 0..100 {
        let d = rng.random_range(2..=12);
        let r = random_spd(&mut rng, d);
        let w = random_vector(&mut rng, d);
        let alpha_b = rng.random_range(0.1..3.0);

        let point = bn_theory::lagrangian_stationary_point(&w, &r, alpha_b)?;
        stat = stat.max(bn_theory::lagrangian_grad(&point, &w, &r, alpha_b)?.max_abs());

        let sol = bn_theory::constrained_minimizer(&w, &r)?;
        feasibility = feasibility.max(sol.constraint_residual);
        stat = stat.max(bn_theory::lagrangian_grad(&sol.w_bn, &w, &r, sol.alpha_b)?.max_abs());

        let at = random_vector(&mut rng, d);
        let g = bn_theory::lagrangian_grad(&at, &w, &r, alpha_b)?;
        let h = 1e-6;
        for i in 0..d {
            let mut up = at.clone();
            up[i] += h;
            let mut dn = at.clone();
            dn[i] -= h;
            let num = (bn_theory::lagrangian_value(&up, &w, &r, alpha_b)?
                - bn_theory::lagrangian_value(&dn, &w, &r, alpha_b)?)
                / (2.0 * h);
            fd = fd.max(nn::relative_error(g[i], num, 1e-3));
        }

        let gamma = rng.random_range(0.2..3.0);
        let wb = bn_theory::bn_weight(&w, &r, gamma)?;
        norm = norm.max((linalg::quad_form(&wb, &r)? - gamma * gamma).abs());
        let c = rng.random_range(0.01..100.0);
        let wc = bn_theory::bn_weight(&w.scaled(c), &r, gamma)?;
        scale = scale.max(wc.sub(&wb).max_abs());
    }
    push("lagrangian_stationarity", stat, 1e-10);
    push("constraint_feasibility", feasibility, 1e-12);
    push("lagrangian_grad_vs_finite_difference", fd, 1e-6);
    push("bn_weight_normalization", norm, 1e-10);
    push("bn_weight_scale_invariance", scale, 1e-12);

    let mut eig_identity = 0.0_f64;
    let mut recon = 0.0_f64;
    let mut ortho = 0.0_f64;
    let mut sqrt_err = 0.0_f64;
    let mut shrink = 0.0_f64;
    for d in [1, 2, 3, 5, 8, 13, 21, 32] {
        let r = random_spd(&mut rng, d);
        let eig = linalg::sym_eigen_default(&r)?;
        let w = random_vector(&mut rng, d);
        let q = linalg::quad_form(&w, &r)?;
        let e = bn_theory::eigen_quadratic_form(&w, &eig)?;
        eig_identity = eig_identity.max((e - q).abs() / q.abs().max(1.0));
        let s = r.max_abs().max(1.0);
        recon = recon.max(eig.reconstruct().max_abs_diff(&r)? / s);
        ortho = ortho.max(eig.orthogonality_error());
        let b = linalg::matrix_sqrt(&r)?;
        sqrt_err = sqrt_err.max(b.matmul(&b)?.max_abs_diff(&r)? / s);

        let alpha = rng.random_range(0.0..5.0);
        let out = bn_theory::l2_spectral_rescale(&w, &eig, alpha)?;
        let before = eig.coefficients(&w)?;
        let after = eig.coefficients(&out)?;
        shrink = shrink.max(max_of(before.iter().zip(after.iter()).map(|(b, a)| a.abs() - b.abs())));
    }
    push("eigen_quadratic_form_identity", eig_identity, 1e-10);
    push("sym_eigen_reconstruction", recon, 1e-9);
    push("sym_eigen_orthogonality", ortho, 1e-9);
    push("matrix_sqrt_squares_back", sqrt_err, 1e-8);
    push("l2_rescale_never_expands", shrink, 1e-12);

    {
        let d = 4;
        let r = random_spd(&mut rng, d);
        let sigma_sq = 0.5;
        let clean = data::synthetic_gaussian(100_000, d, &r, 2)?;
        let noisy = data::inject_noise_snr(&clean, 1.0, 3)?;
        // inject_noise_snr picks its own variance; recover it from the pooled statistics
        let injected = data::pooled_variance(&clean.images);
        let measured = linalg::covariance(&noisy.images, false)?;
        let expect = bn_theory::noisy_covariance(&r, injected)?;
        push("noisy_covariance_monte_carlo", measured.max_abs_diff(&expect)?, 5e-2);

        let exact = bn_theory::noisy_covariance(&r, sigma_sq)?;
        let shift = linalg::sym_eigen_default(&exact)?;
        let base = linalg::sym_eigen_default(&r)?;
        let spectral = max_of(
            shift
                .lambda
                .iter()
                .zip(base.lambda.iter())
                .map(|(a, b)| (a - b - sigma_sq).abs()),
        );
        push("noisy_covariance_eigen_shift", spectral, 1e-10);
    }

    {
        let high = bn_theory::bn_noise_reg_coefficient(1.3, 1.0, 1e6)?;
        push(
            "noise_coefficient_high_noise_limit",
            (high / (1.3 * 1.3) - 1.0).abs(),
            1e-3,
        );
        let low = bn_theory::bn_noise_reg_coefficient(1.3, 1.0, 1e-6)?;
        push(
            "noise_coefficient_low_noise_limit",
            (low / (1e-6 * 1.3 * 1.3) - 1.0).abs(),
            1e-3,
        );
    }

    {
        let mut worst = 0.0_f64;
        for case in 0..10 {
            let d = 1 + case % 4;
            let r = random_spd(&mut rng, d);
            let w = random_vector(&mut rng, d);
            let sigma_sq = rng.random_range(0.1..2.0);
            let (lhs, rhs) = bn_theory::mse_decomposition_check(&w, &r, sigma_sq, 1_000_000, 100 + case as u64)?;
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
        push("mse_decomposition", worst, 2e-2);
    }

    {
        let shape = MlpShape {
            input: 10,
            hidden: 8,
            classes: 3,
        };
        let cfg = TrainConfig {
            init_std: 0.5,
            seed: 11,
            ..TrainConfig::default()
        };
        let m = Mlp::new(shape, &cfg);
        let x = Matrix::new(16, 10, (0..160).map(|_| rng.sample(StandardNormal)).collect())?;
        let mut y = Matrix::zeros(16, 3);
        for i in 0..16 {
            y[(i, i % 3)] = 1.0;
        }
        let report = nn::grad_check(&m, &x, &y, 1e-5)?;
        push("backprop_vs_finite_difference", report.max_rel_err(), 1e-4);
    }

    Ok(props)
}
