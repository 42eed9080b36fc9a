//! `bn-lens`: property verification, single training runs and the amplitude
//! and SNR sweeps on MNIST.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bn_lens::data;
use bn_lens::experiments::{self, Splits, SweepKind};
use bn_lens::nn;
use bn_lens::verify;
use clap::{Parser, Subcommand, ValueEnum};

use config::{CliConfig, RunArgs, UsageError};

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Parser)]
#[command(name = "bn-lens", version, about)]
struct Cli {
    /// key=value file supplying any flag; the command line wins
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical property suite on synthetic data
    Verify {
        #[arg(long, hide = true, default_value_t = 1.0)]
        tol_scale: f64,
    },
    /// Train one network and write its history CSV
    Train(RunArgs),
    /// Run a sweep and check the norm/α trends
    Exp {
        kind: ExpKind,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpKind {
    Amplitude,
    Snr,
}

/// Usage, environment and internal errors; all exit with status 2.
struct Failure(String);

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure(e.0)
    }
}

impl From<bn_lens::Error> for Failure {
    fn from(e: bn_lens::Error) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let file = match &cli.config {
        Some(p) => config::read_config_file(p)?,
        None => Default::default(),
    };
    let env_dir = std::env::var_os(config::DATA_DIR_ENV).map(PathBuf::from);
    match cli.command {
        Command::Verify { tol_scale } => cmd_verify(tol_scale),
        Command::Train(args) => {
            let cfg = config::resolve(&args, &file, env_dir)?;
            print_echo("train", &cfg);
            cmd_train(&cfg)
        }
        Command::Exp { kind, args } => {
            let cfg = config::resolve(&args, &file, env_dir)?;
            let kind = match kind {
                ExpKind::Amplitude => SweepKind::Amplitude,
                ExpKind::Snr => SweepKind::Snr,
            };
            print_echo(&format!("exp {kind}"), &cfg);
            cmd_exp(kind, &cfg)
        }
    }
}

fn print_echo(command: &str, cfg: &CliConfig) {
    println!("# bn-lens {command}");
    for line in cfg.echo() {
        println!("{line}");
    }
}

fn cmd_verify(tol_scale: f64) -> Result<bool, Failure> {
    let props = verify::run_suite(tol_scale)?;
    let mut ok = true;
    for p in &props {
        println!("{p}");
        ok &= p.passed();
    }
    let failed = props.iter().filter(|p| !p.passed()).count();
    println!("{} properties, {} failed", props.len(), failed);
    Ok(ok)
}

fn require(path: PathBuf) -> Result<PathBuf, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure(format!("missing data file: {}", path.display())))
    }
}

fn load_splits(cfg: &CliConfig) -> Result<Splits, Failure> {
    let dir = &cfg.data_dir;
    let paths = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .map(|f| require(dir.join(f)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let full = data::load_mnist(&paths[0], &paths[1])?;
    let train = match cfg.subset {
        Some(n) => full.stratified_subset(n, cfg.train.seed)?,
        None => full,
    };
    let test = data::load_mnist(&paths[2], &paths[3])?;
    Ok(Splits { train, test })
}

fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure(format!("cannot create output directory {}: {e}", dir.display())))
}

fn cmd_train(cfg: &CliConfig) -> Result<bool, Failure> {
    let Splits { train, test } = load_splits(cfg)?;
    ensure_out_dir(&cfg.out_dir)?;
    let m = nn::init_mlp(&cfg.train);
    let (m, history) = nn::train(m, &train, Some(&test), &cfg.train)?;
    println!("initial_loss={}", history.initial_loss);
    for e in &history.epochs {
        println!(
            "epoch {} train_loss={:.6} train_acc={:.4} test_acc={:.4}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.test_acc.unwrap_or(f64::NAN)
        );
    }
    let path = cfg.out_dir.join("history.csv");
    history.write_csv(&path)?;
    let norms = nn::weight_norm_stats(&m);
    let alpha = nn::per_node_alpha(&m, &train)?;
    println!(
        "mean_l1={} mean_l2={} mean_alpha={}",
        norms.mean_l1,
        norms.mean_l2,
        alpha.mean()
    );
    println!("test_accuracy={}", history.final_test_accuracy().unwrap_or(f64::NAN));
    println!("wrote {}", path.display());
    Ok(true)
}

fn describe(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_exp(kind: SweepKind, cfg: &CliConfig) -> Result<bool, Failure> {
    let settings = match kind {
        SweepKind::Amplitude => &cfg.amplitudes,
        SweepKind::Snr => &cfg.snrs,
    };
    let splits = load_splits(cfg)?;
    ensure_out_dir(&cfg.out_dir)?;
    let mut report = experiments::run_sweep(kind, &cfg.train, settings, &splits, cfg.jobs)?;
    report
        .config
        .push(("subset".into(), cfg.subset.map_or("full".into(), |n| n.to_string())));
    println!("setting,mean_l1,mean_l2,mean_alpha,test_accuracy,seconds");
    for (p, t) in report.points.iter().zip(&report.wall_clock) {
        println!(
            "{},{:.6},{:.6},{:.6},{:.4},{:.1}",
            p.setting,
            p.mean_l1,
            p.mean_l2,
            p.mean_alpha,
            p.test_accuracy,
            t.as_secs_f64()
        );
    }
    let path = cfg.out_dir.join(format!("{kind}.csv"));
    experiments::write_report_csv(&report, &path)?;
    println!(
        "wrote {} and {}",
        path.display(),
        experiments::alpha_path(&path).display()
    );

    let v = report.trend();
    println!("trend l1_decreasing={}", describe(v.l1_monotone));
    println!("trend l2_decreasing={}", describe(v.l2_monotone));
    if let Some(a) = v.alpha_monotone {
        println!("trend alpha_increasing={}", describe(a));
    }
    println!("TREND {}", describe(v.passed()));
    Ok(v.passed())
}
