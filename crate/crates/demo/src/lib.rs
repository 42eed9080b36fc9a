//! WebAssembly bindings for `www/index.html`. Every export works on a 2-D
//! problem given by a covariance `[[r11, r12], [r12, r22]]` and returns a
//! flat `Float64Array`.

use bn_lens::bn_theory;
use bn_lens::linalg::{self, Matrix, SymEigen};
use wasm_bindgen::prelude::*;

fn cov(r11: f64, r12: f64, r22: f64) -> bn_lens::Result<Matrix> {
    Matrix::new(2, 2, vec![r11, r12, r12, r22])
}

fn eigen_flat(e: &SymEigen) -> [f64; 6] {
    [
        e.lambda[0],
        e.lambda[1],
        e.q[(0, 0)],
        e.q[(1, 0)],
        e.q[(0, 1)],
        e.q[(1, 1)],
    ]
}

/// Noise coefficient `σ²γ²/(λ+σ²)` at `n` evenly spaced `σ²` in `[0, sigma_sq_max]`.
pub fn noise_curve(gamma: f64, lambda: f64, sigma_sq_max: f64, n: usize) -> bn_lens::Result<Vec<f64>> {
    if n < 2 {
        return Err(bn_lens::Error::InvalidArgument("need at least 2 points".into()));
    }
    (0..n)
        .map(|i| {
            let s = sigma_sq_max * i as f64 / (n - 1) as f64;
            bn_theory::bn_noise_reg_coefficient(gamma, lambda, s)
        })
        .collect()
}

/// `[out1, out2, λ1, λ2, q11, q21, q12, q22]`: `w` after L2 shrinkage with
/// rate `alpha`, then the eigensystem (columns are eigenvectors).
pub fn shrink(r11: f64, r12: f64, r22: f64, w1: f64, w2: f64, alpha: f64) -> bn_lens::Result<Vec<f64>> {
    let eig = linalg::sym_eigen_default(&cov(r11, r12, r22)?)?;
    let out = bn_theory::l2_spectral_rescale(&[w1, w2], &eig, alpha)?;
    let mut v = out.into_inner();
    v.extend(eigen_flat(&eig));
    Ok(v)
}

/// `[wbn1, wbn2, alpha_bn, constraint_alpha, λ1, λ2, q11, q21, q12, q22]`.
pub fn effective_weight(r11: f64, r12: f64, r22: f64, w1: f64, w2: f64, gamma: f64) -> bn_lens::Result<Vec<f64>> {
    let r = cov(r11, r12, r22)?;
    let eig = linalg::sym_eigen_default(&r)?;
    let w = [w1, w2];
    let mut v = bn_theory::bn_weight(&w, &r, gamma)?.into_inner();
    v.push(linalg::quad_form(&w, &r)?.sqrt());
    v.push(bn_theory::constraint_alpha(&w, &r)?);
    v.extend(eigen_flat(&eig));
    Ok(v)
}

fn js(r: bn_lens::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = noiseCurve)]
pub fn noise_curve_js(gamma: f64, lambda: f64, sigma_sq_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    js(noise_curve(gamma, lambda, sigma_sq_max, n))
}

#[wasm_bindgen(js_name = shrink)]
pub fn shrink_js(r11: f64, r12: f64, r22: f64, w1: f64, w2: f64, alpha: f64) -> Result<Vec<f64>, JsError> {
    js(shrink(r11, r12, r22, w1, w2, alpha))
}

#[wasm_bindgen(js_name = effectiveWeight)]
pub fn effective_weight_js(r11: f64, r12: f64, r22: f64, w1: f64, w2: f64, gamma: f64) -> Result<Vec<f64>, JsError> {
    js(effective_weight(r11, r12, r22, w1, w2, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_starts_at_zero_and_rises() {
        let c = noise_curve(2.0, 1.0, 10.0, 11).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[1], 4.0 / 2.0);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
        assert!(c[10] < 4.0);
        assert!(noise_curve(1.0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn shrink_diagonal() {
        let v = shrink(4.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(v.len(), 8);
        assert!((v[0] - 0.8).abs() < 1e-15);
        assert!((v[1] - 0.5).abs() < 1e-15);
        assert_eq!(&v[2..4], &[4.0, 1.0]);
    }

    #[test]
    fn effective_weight_lies_on_gamma_ellipse() {
        let v = effective_weight(2.0, 0.5, 1.0, 0.3, -1.2, 1.5).unwrap();
        let r = cov(2.0, 0.5, 1.0).unwrap();
        let q = linalg::quad_form(&v[..2], &r).unwrap();
        assert!((q - 2.25).abs() < 1e-12);
        assert!(effective_weight(1.0, 0.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(shrink(1.0, 2.0, 1.0, 1.0, 1.0, -1.0).is_err());
    }
}
