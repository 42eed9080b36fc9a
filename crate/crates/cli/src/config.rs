//! Flag resolution: command line, then `--config` file, then environment,
//! then built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bn_lens::nn::TrainConfig;

pub const DATA_DIR_ENV: &str = "BN_LENS_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";
pub const DEFAULT_OUT_DIR: &str = "results";
pub const DEFAULT_SUBSET: usize = 10_000;
pub const DEFAULT_AMPLITUDES: [f64; 5] = [2.0, 3.0, 4.0, 5.0, 6.0];
pub const DEFAULT_SNRS: [f64; 4] = [100.0, 10.0, 1.0, 0.5];

pub const KEYS: [&str; 14] = [
    "data-dir",
    "out-dir",
    "seed",
    "epochs",
    "batch-size",
    "lr",
    "subset",
    "full",
    "amplitudes",
    "snrs",
    "jobs",
    "init-std",
    "bn-momentum",
    "bn-epsilon",
];

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Clone, Debug, Default, clap::Args)]
pub struct RunArgs {
    /// Directory holding the four MNIST IDX files [env: BN_LENS_DATA_DIR]
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Directory for CSV outputs
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training subset size (stratified, seeded)
    #[arg(long)]
    pub subset: Option<usize>,
    /// Train on the full training set instead of a subset
    #[arg(long)]
    pub full: bool,
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub snrs: Option<Vec<f64>>,
    /// Sweep points trained concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub bn_momentum: Option<f64>,
    #[arg(long)]
    pub bn_epsilon: Option<f64>,
}

/// Fully-resolved settings for a `train` or `exp` run.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    /// `None` trains on the full set.
    pub subset: Option<usize>,
    pub amplitudes: Vec<f64>,
    pub snrs: Vec<f64>,
    pub jobs: usize,
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            UsageError(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                n + 1
            ))
        })?;
        let k = k.trim().replace('_', "-");
        if !KEYS.contains(&k.as_str()) {
            return Err(UsageError(format!("{}:{}: unknown key {k:?}", path.display(), n + 1)));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_file(&text, path)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| UsageError(format!("invalid value {v:?} for {key}: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, UsageError> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

struct Layer<'a> {
    file: &'a BTreeMap<String, String>,
}

impl Layer<'_> {
    fn get<T: FromStr>(&self, key: &str, cli: Option<T>) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.file.get(key).map(|v| parse_value(key, v)).transpose(),
        }
    }

    fn list(&self, key: &str, cli: &Option<Vec<f64>>) -> Result<Option<Vec<f64>>, UsageError> {
        match cli {
            Some(v) => Ok(Some(v.clone())),
            None => self.file.get(key).map(|v| parse_list(key, v)).transpose(),
        }
    }
}

/// Merges the layers. `env_data_dir` is the value of [`DATA_DIR_ENV`].
pub fn resolve(
    cli: &RunArgs,
    file: &BTreeMap<String, String>,
    env_data_dir: Option<PathBuf>,
) -> Result<CliConfig, UsageError> {
    let l = Layer { file };
    let d = TrainConfig::default();
    let train = TrainConfig {
        batch_size: l.get("batch-size", cli.batch_size)?.unwrap_or(d.batch_size),
        epochs: l.get("epochs", cli.epochs)?.unwrap_or(d.epochs),
        lr: l.get("lr", cli.lr)?.unwrap_or(d.lr),
        seed: l.get("seed", cli.seed)?.unwrap_or(d.seed),
        init_std: l.get("init-std", cli.init_std)?.unwrap_or(d.init_std),
        bn_momentum: l.get("bn-momentum", cli.bn_momentum)?.unwrap_or(d.bn_momentum),
        bn_epsilon: l.get("bn-epsilon", cli.bn_epsilon)?.unwrap_or(d.bn_epsilon),
    };
    train.validate().map_err(|e| UsageError(e.to_string()))?;

    let full = cli.full || l.get::<bool>("full", None)?.unwrap_or(false);
    let subset = if full {
        None
    } else {
        let n = l.get("subset", cli.subset)?.unwrap_or(DEFAULT_SUBSET);
        if n == 0 {
            return Err(UsageError("subset must be at least 1".into()));
        }
        Some(n)
    };
    let jobs = l.get("jobs", cli.jobs)?.unwrap_or(1);
    if jobs == 0 {
        return Err(UsageError("jobs must be at least 1".into()));
    }

    let data_dir = l
        .get::<PathBuf>("data-dir", cli.data_dir.clone())?
        .or(env_data_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    let out_dir = l
        .get::<PathBuf>("out-dir", cli.out_dir.clone())?
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    Ok(CliConfig {
        data_dir,
        out_dir,
        train,
        subset,
        amplitudes: l
            .list("amplitudes", &cli.amplitudes)?
            .unwrap_or(DEFAULT_AMPLITUDES.to_vec()),
        snrs: l.list("snrs", &cli.snrs)?.unwrap_or(DEFAULT_SNRS.to_vec()),
        jobs,
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl CliConfig {
    /// `key=value` lines that, saved to a file, reproduce this run via `--config`.
    pub fn echo(&self) -> Vec<String> {
        let t = &self.train;
        let mut lines = vec![
            format!("data-dir={}", self.data_dir.display()),
            format!("out-dir={}", self.out_dir.display()),
            format!("seed={}", t.seed),
            format!("epochs={}", t.epochs),
            format!("batch-size={}", t.batch_size),
            format!("lr={}", t.lr),
        ];
        match self.subset {
            Some(n) => lines.extend([format!("subset={n}"), "full=false".into()]),
            None => lines.push("full=true".into()),
        }
        lines.extend([
            format!("amplitudes={}", join(&self.amplitudes)),
            format!("snrs={}", join(&self.snrs)),
            format!("jobs={}", self.jobs),
            format!("init-std={}", t.init_std),
            format!("bn-momentum={}", t.bn_momentum),
            format!("bn-epsilon={}", t.bn_epsilon),
        ]);
        lines
    }
}
