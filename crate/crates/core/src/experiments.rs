//! Amplitude and SNR sweeps: train a fresh network per setting and record
//! hidden-layer weight norms and per-unit regularization rates.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::nn::{self, TrainConfig};

pub const REPORT_HEADER: [&str; 6] = ["setting", "mean_l1", "mean_l2", "mean_alpha", "test_accuracy", "seed"];
pub const ALPHA_HEADER: [&str; 3] = ["setting", "node_index", "alpha"];

/// Offset added to the training seed for the noise drawn on the test split.
const TEST_NOISE_SEED_OFFSET: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Amplitude,
    Snr,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Amplitude => "amplitude",
            SweepKind::Snr => "snr",
        })
    }
}

/// Train and test splits shared by every point of a sweep.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub setting: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub mean_alpha: f64,
    pub per_node_alpha: Vector,
    pub test_accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub kind: SweepKind,
    /// In the order the settings were given.
    pub points: Vec<SweepPoint>,
    pub config: Vec<(String, String)>,
    pub wall_clock: Vec<Duration>,
}

/// Outcome of the monotone-trend check for a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendVerdict {
    pub l1_monotone: bool,
    pub l2_monotone: bool,
    /// Only checked for amplitude sweeps.
    pub alpha_monotone: Option<bool>,
}

impl TrendVerdict {
    pub fn passed(&self) -> bool {
        self.l1_monotone && self.l2_monotone && self.alpha_monotone.unwrap_or(true)
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

impl SweepReport {
    /// Amplitude sweeps expect norms to fall and α to rise with amplitude;
    /// SNR sweeps expect norms to fall as the SNR drops.
    pub fn trend(&self) -> TrendVerdict {
        let mut pts: Vec<&SweepPoint> = self.points.iter().collect();
        match self.kind {
            SweepKind::Amplitude => pts.sort_by(|a, b| a.setting.total_cmp(&b.setting)),
            SweepKind::Snr => pts.sort_by(|a, b| b.setting.total_cmp(&a.setting)),
        }
        let l1: Vec<f64> = pts.iter().map(|p| p.mean_l1).collect();
        let l2: Vec<f64> = pts.iter().map(|p| p.mean_l2).collect();
        let alpha: Vec<f64> = pts.iter().map(|p| p.mean_alpha).collect();
        TrendVerdict {
            l1_monotone: strictly_decreasing(&l1),
            l2_monotone: strictly_decreasing(&l2),
            alpha_monotone: (self.kind == SweepKind::Amplitude).then(|| strictly_increasing(&alpha)),
        }
    }
}

/// Standard deviation over mean (population convention).
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn validate_settings(settings: &[f64], what: &str) -> Result<()> {
    if settings.is_empty() {
        return Err(Error::invalid(format!("no {what} values given")));
    }
    if let Some(bad) = settings.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("{what} must be positive, got {bad}")));
    }
    Ok(())
}

/// Trains a fresh network on already-transformed splits and measures it.
pub fn measure_point(cfg: &TrainConfig, setting: f64, train: &Dataset, test: &Dataset) -> Result<SweepPoint> {
    let model = nn::Mlp::new(
        nn::MlpShape {
            input: train.dim(),
            ..nn::MlpShape::MNIST
        },
        cfg,
    );
    let (model, _) = nn::train(model, train, None, cfg)?;
    let norms = nn::weight_norm_stats(&model);
    let alpha = nn::per_node_alpha(&model, train)?;
    Ok(SweepPoint {
        setting,
        mean_l1: norms.mean_l1,
        mean_l2: norms.mean_l2,
        mean_alpha: alpha.mean(),
        per_node_alpha: alpha,
        test_accuracy: model.accuracy(test)?,
        seed: cfg.seed,
    })
}

fn run_point(kind: SweepKind, cfg: &TrainConfig, setting: f64, data: &Splits) -> Result<SweepPoint> {
    let (train, test) = match kind {
        SweepKind::Amplitude => (
            data::scale_amplitude(&data.train, setting)?,
            data::scale_amplitude(&data.test, setting)?,
        ),
        SweepKind::Snr => (
            data::inject_noise_snr(&data.train, setting, cfg.seed)?,
            data::inject_noise_snr(&data.test, setting, cfg.seed + TEST_NOISE_SEED_OFFSET)?,
        ),
    };
    measure_point(cfg, setting, &train, &test)
}

/// Runs every setting of a sweep, up to `jobs` at a time. Points are
/// independent, so the report is identical for any `jobs`.
pub fn run_sweep(
    kind: SweepKind,
    cfg: &TrainConfig,
    settings: &[f64],
    data: &Splits,
    jobs: usize,
) -> Result<SweepReport> {
    validate_settings(settings, &kind.to_string())?;
    cfg.validate()?;
    let jobs = jobs.clamp(1, settings.len());
    let next = AtomicUsize::new(0);
    type Slot = Option<Result<(SweepPoint, Duration)>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..settings.len()).map(|_| None).collect());

    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= settings.len() {
            break;
        }
        let start = Instant::now();
        let r = run_point(kind, cfg, settings[i], data).map(|p| (p, start.elapsed()));
        results.lock().expect("results lock")[i] = Some(r);
    };
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }

    let mut points = Vec::with_capacity(settings.len());
    let mut wall_clock = Vec::with_capacity(settings.len());
    for r in results.into_inner().expect("results lock") {
        let (p, t) = r.expect("every setting visited")?;
        points.push(p);
        wall_clock.push(t);
    }

    let mut config = vec![
        ("kind".to_string(), kind.to_string()),
        (
            "settings".to_string(),
            settings.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        ),
        ("train_samples".to_string(), data.train.len().to_string()),
        ("test_samples".to_string(), data.test.len().to_string()),
    ];
    config.extend(cfg.snapshot());
    Ok(SweepReport {
        kind,
        points,
        config,
        wall_clock,
    })
}

pub fn run_amplitude_sweep(cfg: &TrainConfig, amplitudes: &[f64], data: &Splits) -> Result<SweepReport> {
    run_sweep(SweepKind::Amplitude, cfg, amplitudes, data, 1)
}

pub fn run_snr_sweep(cfg: &TrainConfig, snrs: &[f64], data: &Splits) -> Result<SweepReport> {
    run_sweep(SweepKind::Snr, cfg, snrs, data, 1)
}

/// Path of the per-node α companion file: `<path>.alpha.csv`.
pub fn alpha_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".alpha.csv");
    PathBuf::from(s)
}

fn csv_writer(path: &Path, config: &[(String, String)]) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (k, v) in config {
        writeln!(out, "# {k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(out))
}

/// Writes the summary CSV at `path` and per-node α rows at
/// [`alpha_path`]`(path)`. Both start with the config snapshot as `# key=value`
/// comment lines. Floats use the shortest representation that round-trips.
pub fn write_report_csv(rep: &SweepReport, path: &Path) -> Result<()> {
    let err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Csv {
            path: p.clone(),
            source,
        }
    };
    let mut w = csv_writer(path, &rep.config)?;
    w.write_record(REPORT_HEADER).map_err(err(path))?;
    for p in &rep.points {
        w.write_record([
            p.setting.to_string(),
            p.mean_l1.to_string(),
            p.mean_l2.to_string(),
            p.mean_alpha.to_string(),
            p.test_accuracy.to_string(),
            p.seed.to_string(),
        ])
        .map_err(err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let apath = alpha_path(path);
    let mut w = csv_writer(&apath, &rep.config)?;
    w.write_record(ALPHA_HEADER).map_err(err(&apath))?;
    for p in &rep.points {
        for (j, a) in p.per_node_alpha.iter().enumerate() {
            w.write_record([p.setting.to_string(), j.to_string(), a.to_string()])
                .map_err(err(&apath))?;
        }
    }
    w.flush().map_err(|e| Error::io(&apath, e))
}

/// One parsed row of a summary CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub setting: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub mean_alpha: f64,
    pub test_accuracy: f64,
    pub seed: u64,
}

fn parse_field<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        msg: format!("cannot parse field {s:?}"),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv_reader(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if rec.len() != REPORT_HEADER.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected {} fields, got {}", REPORT_HEADER.len(), rec.len()),
            });
        }
        rows.push(ReportRow {
            setting: parse_field(path, &rec[0])?,
            mean_l1: parse_field(path, &rec[1])?,
            mean_l2: parse_field(path, &rec[2])?,
            mean_alpha: parse_field(path, &rec[3])?,
            test_accuracy: parse_field(path, &rec[4])?,
            seed: parse_field(path, &rec[5])?,
        });
    }
    Ok(rows)
}

/// `(setting, node_index, alpha)` rows of an α companion file.
pub fn read_alpha_csv(path: &Path) -> Result<Vec<(f64, usize, f64)>> {
    let mut r = csv_reader(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        rows.push((
            parse_field(path, &rec[0])?,
            parse_field(path, &rec[1])?,
            parse_field(path, &rec[2])?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(setting: f64, l1: f64, l2: f64, alpha: f64) -> SweepPoint {
        SweepPoint {
            setting,
            mean_l1: l1,
            mean_l2: l2,
            mean_alpha: alpha,
            per_node_alpha: Vector::new(vec![alpha; 3]),
            test_accuracy: 0.5,
            seed: 1,
        }
    }

    fn report(kind: SweepKind, points: Vec<SweepPoint>) -> SweepReport {
        let n = points.len();
        SweepReport {
            kind,
            points,
            config: vec![("kind".into(), kind.to_string())],
            wall_clock: vec![Duration::ZERO; n],
        }
    }

    #[test]
    fn amplitude_trend() {
        let good = report(
            SweepKind::Amplitude,
            vec![point(3.0, 2.0, 0.2, 5.0), point(2.0, 3.0, 0.3, 4.0)],
        );
        assert!(good.trend().passed());
        let bad = report(
            SweepKind::Amplitude,
            vec![point(2.0, 3.0, 0.3, 5.0), point(3.0, 2.0, 0.2, 4.0)],
        );
        assert_eq!(bad.trend().alpha_monotone, Some(false));
    }

    #[test]
    fn snr_trend_uses_decreasing_snr() {
        let r = report(
            SweepKind::Snr,
            vec![
                point(100.0, 3.0, 0.3, 1.0),
                point(10.0, 2.5, 0.2, 1.0),
                point(0.5, 1.0, 0.1, 1.0),
            ],
        );
        let t = r.trend();
        assert!(t.passed());
        assert_eq!(t.alpha_monotone, None);
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report_csv(&report(SweepKind::Snr, vec![]), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "# kind=snr\nsetting,mean_l1,mean_l2,mean_alpha,test_accuracy,seed\n"
        );
        assert!(read_report_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let pts = vec![
            point(0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300),
            point(6.0, 2.0f64.sqrt(), 1e22 / 7.0, 0.30000000000000004),
        ];
        let rep = report(SweepKind::Amplitude, pts.clone());
        write_report_csv(&rep, &path).unwrap();
        let rows = read_report_csv(&path).unwrap();
        for (r, p) in rows.iter().zip(&pts) {
            assert_eq!(
                (r.setting, r.mean_l1, r.mean_l2, r.mean_alpha, r.test_accuracy, r.seed),
                (p.setting, p.mean_l1, p.mean_l2, p.mean_alpha, p.test_accuracy, p.seed)
            );
        }
        let alpha = read_alpha_csv(&alpha_path(&path)).unwrap();
        assert_eq!(alpha.len(), 6);
        assert_eq!(alpha[4], (6.0, 1, 0.30000000000000004));
    }

    #[test]
    fn settings_are_validated() {
        let splits = Splits {
            train: Dataset::new(crate::Matrix::zeros(4, 2), &[0, 1, 0, 1]).unwrap(),
            test: Dataset::new(crate::Matrix::zeros(2, 2), &[0, 1]).unwrap(),
        };
        let cfg = TrainConfig::default();
        assert!(run_amplitude_sweep(&cfg, &[], &splits).is_err());
        assert!(run_amplitude_sweep(&cfg, &[1.0, -2.0], &splits).is_err());
        assert!(run_snr_sweep(&cfg, &[0.0], &splits).is_err());
    }

    #[test]
    fn coefficient_of_variation_examples() {
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
        assert!((coefficient_of_variation(&[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }
}
