//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! criterion fails. MNIST is read from `BN_LENS_DATA_DIR`, falling back to
//! `<workspace>/data/mnist`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bn_lens::bn_theory::{self, BnParams};
use bn_lens::data::{self, Dataset};
use bn_lens::experiments::{self, Splits, SweepKind, SweepReport};
use bn_lens::linalg::{self, Matrix};
use bn_lens::nn::{self, Mlp, MlpShape, TrainConfig};
use bn_lens::verify::{random_spd, random_vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<(bool, String), String>;

const AMPLITUDES: [f64; 5] = [2.0, 3.0, 4.0, 5.0, 6.0];
const SNRS: [f64; 4] = [100.0, 10.0, 1.0, 0.5];
const SUBSET: usize = 10_000;
const SEED: u64 = 42;

fn within(limit: Duration, t: Duration) -> bool {
    t < limit
}

fn c1_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 8;
    let r = random_spd(&mut rng, d);
    let ds = data::synthetic_gaussian(100_000, d, &r, 2).map_err(|e| e.to_string())?;
    let w = random_vector(&mut rng, d);
    let gamma = 1.3;
    let var = linalg::quad_form(&w, &r).map_err(|e| e.to_string())?;
    let p = BnParams::new(gamma, 0.0, 0.0).map_err(|e| e.to_string())?;
    let xw = ds.images.matvec(&w).map_err(|e| e.to_string())?;
    let y = bn_theory::bn_forward_with_stats(&xw, 0.0, var, &p);
    let w_bn = bn_theory::bn_weight(&w, &r, gamma).map_err(|e| e.to_string())?;
    let direct = ds.images.matvec(&w_bn).map_err(|e| e.to_string())?;
    let dev = y.sub(&direct).max_abs();
    let t = start.elapsed();
    Ok((
        dev <= 1e-10 && within(Duration::from_secs(5), t),
        format!("max_dev={dev:e} tol=1e-10 time={:.2}s limit=5s", t.as_secs_f64()),
    ))
}

fn c2_stationarity() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut grad_inf, mut fd_rel) = (0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let d = rng.random_range(2..=10);
        let r = random_spd(&mut rng, d);
        let w = random_vector(&mut rng, d);
        let alpha_b = rng.random_range(0.1..3.0);
        let f = |x: &[f64]| bn_theory::lagrangian_value(x, &w, &r, alpha_b).unwrap();
        let g = |x: &[f64]| bn_theory::lagrangian_grad(x, &w, &r, alpha_b).unwrap();

        let sol = bn_theory::lagrangian_stationary_point(&w, &r, alpha_b).map_err(|e| e.to_string())?;
        grad_inf = grad_inf.max(g(&sol).max_abs());

        let at = random_vector(&mut rng, d);
        let analytic = g(&at);
        let h = 1e-6;
        for i in 0..d {
            let mut up = at.clone();
            up[i] += h;
            let mut dn = at.clone();
            dn[i] -= h;
            let numeric = (f(&up) - f(&dn)) / (2.0 * h);
            fd_rel = fd_rel.max(nn::relative_error(analytic[i], numeric, 1e-3));
        }
    }
    let t = start.elapsed();
    Ok((
        grad_inf <= 1e-10 && fd_rel <= 1e-6 && within(Duration::from_secs(5), t),
        format!(
            "grad_inf={grad_inf:e} tol=1e-10 fd_rel={fd_rel:e} tol=1e-6 time={:.2}s limit=5s",
            t.as_secs_f64()
        ),
    ))
}

fn c3_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut norm, mut scale) = (0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=12);
        let r = random_spd(&mut rng, d);
        let w = random_vector(&mut rng, d);
        let gamma = rng.random_range(0.1..4.0);
        let wb = bn_theory::bn_weight(&w, &r, gamma).map_err(|e| e.to_string())?;
        norm = norm.max((linalg::quad_form(&wb, &r).unwrap() - gamma * gamma).abs());
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let wc = bn_theory::bn_weight(&w.scaled(c), &r, gamma).map_err(|e| e.to_string())?;
        scale = scale.max(wc.sub(&wb).max_abs());
    }
    Ok((
        norm <= 1e-10 && scale <= 1e-12,
        format!("norm_err={norm:e} tol=1e-10 scale_err={scale:e} tol=1e-12"),
    ))
}

fn c4_eigen_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ident, mut recon) = (0.0_f64, 0.0_f64);
    for d in 1..=32 {
        let r = random_spd(&mut rng, d);
        let eig = linalg::sym_eigen_default(&r).map_err(|e| e.to_string())?;
        let w = random_vector(&mut rng, d);
        let e = bn_theory::eigen_quadratic_form(&w, &eig).unwrap();
        ident = ident.max((e - linalg::quad_form(&w, &r).unwrap()).abs());
        recon = recon.max(eig.reconstruct().max_abs_diff(&r).unwrap());
    }
    Ok((
        ident <= 1e-10 && recon <= 1e-9,
        format!("identity_err={ident:e} tol=1e-10 reconstruction_err={recon:e} tol=1e-9"),
    ))
}

fn c5_noise_covariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 6;
    let n = 100_000;
    let r = random_spd(&mut rng, d);
    let sigma_sq: f64 = 0.5;
    let clean = data::synthetic_gaussian(n, d, &r, 6).map_err(|e| e.to_string())?;
    let mut noisy = clean.images.clone();
    for v in noisy.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma_sq.sqrt() * z;
    }
    let measured = linalg::covariance(&noisy, false).map_err(|e| e.to_string())?;
    let expect = bn_theory::noisy_covariance(&r, sigma_sq).unwrap();
    let cov_err = measured.max_abs_diff(&expect).unwrap();

    let gamma = 1.7;
    let lambda = 2.0;
    let high = bn_theory::bn_noise_reg_coefficient(gamma, lambda, 1e6 * lambda).unwrap();
    let high_rel = (high / (gamma * gamma) - 1.0).abs();
    let low_sigma = 1e-6 * lambda;
    let low = bn_theory::bn_noise_reg_coefficient(gamma, lambda, low_sigma).unwrap();
    let low_rel = (low / (low_sigma * gamma * gamma / lambda) - 1.0).abs();
    Ok((
        cov_err <= 5e-2 && high_rel <= 1e-3 && low_rel <= 1e-3,
        format!("cov_err={cov_err:e} tol=5e-2 high_limit_rel={high_rel:e} low_limit_rel={low_rel:e} tol=1e-3"),
    ))
}

fn c6_mse_decomposition() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for case in 0..10 {
        let d = rng.random_range(1..=6);
        let r = random_spd(&mut rng, d);
        let w = random_vector(&mut rng, d);
        let sigma_sq = rng.random_range(0.05..2.0);
        let (lhs, rhs) =
            bn_theory::mse_decomposition_check(&w, &r, sigma_sq, 1_000_000, 600 + case).map_err(|e| e.to_string())?;
        worst = worst.max((lhs - rhs).abs() / rhs);
    }
    let t = start.elapsed();
    Ok((
        worst <= 0.02 && within(Duration::from_secs(30), t),
        format!("max_rel={worst:e} tol=2e-2 time={:.2}s limit=30s", t.as_secs_f64()),
    ))
}

fn c7_backprop() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = MlpShape {
        input: 10,
        hidden: 8,
        classes: 3,
    };
    let cfg = TrainConfig {
        init_std: 0.5,
        seed: 7,
        ..TrainConfig::default()
    };
    let m = Mlp::new(shape, &cfg);
    let x = Matrix::new(16, 10, (0..160).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let classes: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
    let mut y = Matrix::zeros(16, 3);
    for (i, &c) in classes.iter().enumerate() {
        y[(i, c)] = 1.0;
    }
    let report = nn::grad_check(&m, &x, &y, 1e-5).map_err(|e| e.to_string())?;
    let err = report.max_rel_err();
    Ok((err <= 1e-4, format!("max_rel_err={err:e} tol=1e-4")))
}

fn data_dir() -> PathBuf {
    std::env::var_os("BN_LENS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_splits() -> Result<Splits, String> {
    let dir = data_dir();
    let load = |img: &str, lab: &str| {
        data::load_mnist(&dir.join(img), &dir.join(lab)).map_err(|e| format!("MNIST unavailable: {e}"))
    };
    let full = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let train = full.stratified_subset(SUBSET, SEED).map_err(|e| e.to_string())?;
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    Ok(Splits { train, test })
}

fn cfg() -> TrainConfig {
    TrainConfig {
        seed: SEED,
        epochs: 10,
        ..TrainConfig::default()
    }
}

fn columns(rep: &SweepReport) -> String {
    rep.points
        .iter()
        .map(|p| {
            format!(
                "[{}: l1={:.3} l2={:.4} alpha={:.3}]",
                p.setting, p.mean_l1, p.mean_l2, p.mean_alpha
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn sweep(kind: SweepKind, settings: &[f64], splits: &Splits, limit: Duration) -> Result<(SweepReport, Check), String> {
    let start = Instant::now();
    let rep = experiments::run_sweep(kind, &cfg(), settings, splits, 1).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let v = rep.trend();
    let pass = v.passed() && within(limit, t);
    let mut detail = format!("l1_decreasing={} l2_decreasing={}", v.l1_monotone, v.l2_monotone);
    if let Some(a) = v.alpha_monotone {
        detail += &format!(" alpha_increasing={a}");
    }
    detail += &format!(
        " time={:.0}s limit={}s {}",
        t.as_secs_f64(),
        limit.as_secs(),
        columns(&rep)
    );
    Ok((rep, Ok((pass, detail))))
}

struct Default10k {
    model: Mlp,
    history: nn::History,
}

fn train_default(splits: &Splits) -> Result<Default10k, String> {
    let c = cfg();
    let (model, history) =
        nn::train(nn::init_mlp(&c), &splits.train, Some(&splits.test), &c).map_err(|e| e.to_string())?;
    Ok(Default10k { model, history })
}

fn c9_alpha_varies(run: &Default10k, train: &Dataset) -> Check {
    let alpha = nn::per_node_alpha(&run.model, train).map_err(|e| e.to_string())?;
    let cv = experiments::coefficient_of_variation(&alpha);
    Ok((cv > 0.05, format!("nodes={} cv={cv:.4} threshold>0.05", alpha.len())))
}

fn c11_accuracy(run: &Default10k) -> Check {
    let acc = run.history.final_test_accuracy().ok_or("no test accuracy recorded")?;
    Ok((acc >= 0.85, format!("test_accuracy={acc:.4} threshold>=0.85")))
}

fn c12_determinism(first: &SweepReport, run: &Default10k, splits: &Splits) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    experiments::write_report_csv(first, &a).map_err(|e| e.to_string())?;
    let again =
        experiments::run_sweep(SweepKind::Amplitude, &cfg(), &AMPLITUDES, splits, 2).map_err(|e| e.to_string())?;
    experiments::write_report_csv(&again, &b).map_err(|e| e.to_string())?;

    let ha = dir.path().join("ha.csv");
    let hb = dir.path().join("hb.csv");
    run.history.write_csv(&ha).map_err(|e| e.to_string())?;
    train_default(splits)?
        .history
        .write_csv(&hb)
        .map_err(|e| e.to_string())?;

    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    let report_same = read(&a)? == read(&b)?;
    let alpha_same = read(&experiments::alpha_path(&a))? == read(&experiments::alpha_path(&b))?;
    let history_same = read(&ha)? == read(&hb)?;
    Ok((
        report_same && alpha_same && history_same,
        format!("report_identical={report_same} alpha_identical={alpha_same} history_identical={history_same}"),
    ))
}

fn print(n: usize, name: &str, outcome: Check) -> bool {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!(
        "criterion {n:>2} {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() -> ExitCode {
    let mut all = true;
    all &= print(1, "bn_forward_equals_effective_weight", c1_equivalence());
    all &= print(2, "lagrangian_stationarity", c2_stationarity());
    all &= print(3, "bn_weight_normalization", c3_normalization());
    all &= print(4, "eigen_identity", c4_eigen_identity());
    all &= print(5, "noise_covariance_and_limits", c5_noise_covariance());
    all &= print(6, "mse_decomposition", c6_mse_decomposition());
    all &= print(7, "backprop_gradient_check", c7_backprop());

    match load_splits() {
        Err(e) => {
            for (n, name) in [
                (8, "amplitude_trend"),
                (9, "alpha_varies_across_nodes"),
                (10, "snr_trend"),
                (11, "test_accuracy"),
                (12, "determinism"),
            ] {
                all &= print(n, name, Err(e.clone()));
            }
        }
        Ok(splits) => {
            let amp = sweep(SweepKind::Amplitude, &AMPLITUDES, &splits, Duration::from_secs(30 * 60));
            let default_run = train_default(&splits);
            match &amp {
                Ok((_, check)) => all &= print(8, "amplitude_trend", check.clone()),
                Err(e) => all &= print(8, "amplitude_trend", Err(e.clone())),
            }
            all &= print(
                9,
                "alpha_varies_across_nodes",
                default_run
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|r| c9_alpha_varies(r, &splits.train)),
            );
            let snr = sweep(SweepKind::Snr, &SNRS, &splits, Duration::from_secs(25 * 60));
            all &= print(10, "snr_trend", snr.and_then(|(_, c)| c));
            all &= print(
                11,
                "test_accuracy",
                default_run.as_ref().map_err(Clone::clone).and_then(c11_accuracy),
            );
            let det = match (&amp, &default_run) {
                (Ok((rep, _)), Ok(run)) => c12_determinism(rep, run, &splits),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            all &= print(12, "determinism", det);
        }
    }

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
