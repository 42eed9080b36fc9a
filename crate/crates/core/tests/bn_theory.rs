use bn_lens::bn_theory::{self, BnParams};
use bn_lens::data;
use bn_lens::linalg;
use bn_lens::verify::{random_spd, random_vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, d: usize) -> (linalg::Matrix, linalg::Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_spd(&mut rng, d);
    let w = random_vector(&mut rng, d);
    (r, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn population_bn_equals_effective_weight(seed: u64, d in 1usize..=8, gamma in -3.0f64..3.0) {
        let (r, w) = instance(seed, d);
        let ds = data::synthetic_gaussian(200, d, &r, seed ^ 1).unwrap();
        let p = BnParams::new(gamma, 0.0, 0.0).unwrap();
        let xw = ds.images.matvec(&w).unwrap();
        let y = bn_theory::bn_forward_with_stats(&xw, 0.0, linalg::quad_form(&w, &r).unwrap(), &p);
        let direct = ds.images.matvec(&bn_theory::bn_weight(&w, &r, gamma).unwrap()).unwrap();
        prop_assert!(y.sub(&direct).max_abs() <= 1e-10);
    }

    #[test]
    fn stationary_point_and_feasible_minimizer(seed: u64, d in 1usize..=12, alpha_b in 0.01f64..5.0) {
        let (r, w) = instance(seed, d);
        let p = bn_theory::lagrangian_stationary_point(&w, &r, alpha_b).unwrap();
        prop_assert!(bn_theory::lagrangian_grad(&p, &w, &r, alpha_b).unwrap().max_abs() <= 1e-10);

        let sol = bn_theory::constrained_minimizer(&w, &r).unwrap();
        prop_assert!(sol.constraint_residual <= 1e-12);
        prop_assert!((sol.w_bn.dot(&w) - 1.0).abs() <= 1e-12);
        let c = bn_theory::constraint_alpha(&w, &r).unwrap();
        prop_assert!((sol.alpha_b - 2.0 * c).abs() <= 1e-12 * c.max(1.0));
        prop_assert!(bn_theory::lagrangian_grad(&sol.w_bn, &w, &r, sol.alpha_b).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn bn_weight_normalized_and_scale_free(seed: u64, d in 1usize..=12, gamma in -4.0f64..4.0, log_c in -4.0f64..4.0) {
        let (r, w) = instance(seed, d);
        let wb = bn_theory::bn_weight(&w, &r, gamma).unwrap();
        prop_assert!((linalg::quad_form(&wb, &r).unwrap() - gamma * gamma).abs() <= 1e-10);
        let wc = bn_theory::bn_weight(&w.scaled(10f64.powf(log_c)), &r, gamma).unwrap();
        prop_assert!(wc.sub(&wb).max_abs() <= 1e-12);
    }

    #[test]
    fn eigen_form_matches_quad_form(seed: u64, d in 1usize..=32) {
        let (r, w) = instance(seed, d);
        let eig = linalg::sym_eigen_default(&r).unwrap();
        let a = bn_theory::eigen_quadratic_form(&w, &eig).unwrap();
        prop_assert!((a - linalg::quad_form(&w, &r).unwrap()).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn noise_coefficient_monotone(
        gamma in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
        lambda in 0.01f64..10.0,
        sigma_sq in 0.01f64..10.0,
        bump in 0.01f64..1.0,
    ) {
        let f = |l: f64, s: f64| bn_theory::bn_noise_reg_coefficient(gamma, l, s).unwrap();
        prop_assert!(f(lambda, sigma_sq + bump) > f(lambda, sigma_sq));
        prop_assert!(f(lambda + bump, sigma_sq) < f(lambda, sigma_sq));
    }

    #[test]
    fn spectral_rescale_only_shrinks(seed: u64, d in 1usize..=16, alpha in 0.0f64..10.0) {
        let (r, w) = instance(seed, d);
        let eig = linalg::sym_eigen_default(&r).unwrap();
        let out = bn_theory::l2_spectral_rescale(&w, &eig, alpha).unwrap();
        let before = eig.coefficients(&w).unwrap();
        let after = eig.coefficients(&out).unwrap();
        for (b, a) in before.iter().zip(after.iter()) {
            prop_assert!(a.abs() <= b.abs() + 1e-12);
        }
    }
}
