//! Command-line flags, the optional TOML config file, and the resolved
//! per-subcommand settings. Flags take precedence over the file; the file
//! over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use copula_hmc::gcerl::SamplerKind;

#[derive(Debug, Parser)]
#[command(name = "copula-hmc", version, about = "Exact HMC for truncated Gaussians and rank-likelihood copula models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a linearly truncated multivariate normal.
    SampleTmvn(SampleTmvnArgs),
    /// Fit a Gaussian copula correlation matrix to ordinal data.
    FitCopula(FitCopulaArgs),
    /// Fit a Gaussian copula factor model and trace its RMSE.
    FitFactor(FitFactorArgs),
    /// Time envelope collision search against the all-pairs scan.
    BenchEnvelope(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with any of the long flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving all output files [default: out].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Random seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write per-iteration wall-clock phases to timing.csv.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SampleTmvnArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Constraint spec file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of samples [default: 40].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Travel time per sample [default: π/2].
    #[arg(long)]
    pub travel_time: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FitCopulaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ordinal data CSV, one column per variable.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// The input CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Iterations [default: 1000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Travel time per column update [default: π/2].
    #[arg(long)]
    pub travel_time: Option<f64>,
    /// Column sampler [default: hmc].
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: Option<SamplerKind>,
    /// Iterations dropped from summaries [default: iterations / 5].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Summary thinning interval [default: 1].
    #[arg(long)]
    pub thin: Option<usize>,
    /// Inverse-Wishart degrees of freedom; the scale is df·I [default: p + 2].
    #[arg(long)]
    pub df: Option<f64>,
    /// Independent chains, each with seed + chain index [default: 1].
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitFactorArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ordinal data CSV (requires --truth or runs without RMSE).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// The input CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Ground-truth correlation matrix CSV, p rows of p values, no header.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Generate data instead of reading it: p,k,M,n.
    #[arg(long, value_parser = parse_synthetic)]
    pub synthetic: Option<SyntheticSpec>,
    /// Seed for synthetic data generation [default: --seed].
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Number of factors [default: k of --synthetic, else 1].
    #[arg(long)]
    pub factors: Option<usize>,
    /// Iterations [default: 1000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Travel time per joint update [default: π/2].
    #[arg(long)]
    pub travel_time: Option<f64>,
    /// Loadings/column sampler [default: hmc].
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: Option<SamplerKind>,
    /// Iterations dropped from summaries [default: iterations / 2].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Skip the Gibbs sweep over Z after the factor update.
    #[arg(long)]
    pub no_interweave: bool,
    /// Prior variance of each loading [default: 1].
    #[arg(long)]
    pub loadings_scale: Option<f64>,
    /// Bins of the post-burn-in RMSE histogram [default: 30].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Independent chains, each with seed + chain index [default: 1].
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Column lengths to probe [default: 1000,10000,100000].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Levels per column [default: 2].
    #[arg(long)]
    pub levels: Option<usize>,
    /// Searches per size [default: 20].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Largest n also run through the all-pairs scan [default: 10000].
    #[arg(long)]
    pub brute_force_limit: Option<usize>,
    /// Search horizon [default: π/2].
    #[arg(long)]
    pub travel_time: Option<f64>,
}

/// `--synthetic p,k,M,n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub k: usize,
    pub levels: usize,
    pub n: usize,
}

impl std::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.p, self.k, self.levels, self.n)
    }
}

pub fn parse_synthetic(s: &str) -> Result<SyntheticSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("'{x}': {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [p, k, levels, n] => Ok(SyntheticSpec { p, k, levels, n }),
        _ => Err(format!("expected p,k,M,n, got '{s}'")),
    }
}

pub fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: copula_hmc::Error| e.to_string())
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timing: Option<bool>,
    pub input: Option<PathBuf>,
    pub no_header: Option<bool>,
    pub samples: Option<usize>,
    pub travel_time: Option<f64>,
    pub iterations: Option<usize>,
    pub sampler: Option<String>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub df: Option<f64>,
    pub chains: Option<usize>,
    pub truth: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub data_seed: Option<u64>,
    pub factors: Option<usize>,
    pub no_interweave: Option<bool>,
    pub loadings_scale: Option<f64>,
    pub bins: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub levels: Option<usize>,
    pub repeats: Option<usize>,
    pub brute_force_limit: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn sampler(&self) -> Result<Option<SamplerKind>> {
        self.sampler.as_deref().map(|s| parse_sampler(s).map_err(|e| anyhow!(e))).transpose()
    }

    fn synthetic(&self) -> Result<Option<SyntheticSpec>> {
        self.synthetic.as_deref().map(|s| parse_synthetic(s).map_err(|e| anyhow!(e))).transpose()
    }
}

/// A flag, else a file value.
fn layer<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn required_seed(common: &CommonArgs, file: &FileConfig) -> Result<u64> {
    layer(common.seed, file.seed).ok_or_else(|| anyhow!("--seed is required (no implicit randomness)"))
}

fn travel_time(flag: Option<f64>, file: &FileConfig) -> Result<f64> {
    let t = layer(flag, file.travel_time).unwrap_or(std::f64::consts::FRAC_PI_2);
    if !(t > 0.0) || !t.is_finite() {
        bail!("travel time must be positive, got {t}");
    }
    Ok(t)
}

fn positive(name: &str, value: usize) -> Result<usize> {
    if value == 0 {
        bail!("--{name} must be at least 1");
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTmvnRun {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub travel_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitCopulaRun {
    pub input: PathBuf,
    pub has_header: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub timing: bool,
    pub iterations: usize,
    pub travel_time: f64,
    pub sampler: SamplerKind,
    pub burn_in: usize,
    pub thin: usize,
    pub df: Option<f64>,
    pub chains: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorData {
    File { input: PathBuf, has_header: bool, truth: Option<PathBuf> },
    Synthetic { spec: SyntheticSpec, data_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitFactorRun {
    pub data: FactorData,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub timing: bool,
    pub factors: usize,
    pub iterations: usize,
    pub travel_time: f64,
    pub sampler: SamplerKind,
    pub burn_in: usize,
    pub interweave: bool,
    pub loadings_scale: f64,
    pub bins: usize,
    pub chains: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub levels: usize,
    pub repeats: usize,
    pub brute_force_limit: usize,
    pub travel_time: f64,
}

fn out_dir(common: &CommonArgs, file: &FileConfig) -> PathBuf {
    layer(common.out_dir.clone(), file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

impl SampleTmvnArgs {
    pub fn resolve(&self) -> Result<SampleTmvnRun> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        Ok(SampleTmvnRun {
            input: layer(self.input.clone(), file.input.clone()).ok_or_else(|| anyhow!("--input is required"))?,
            out_dir: out_dir(&self.common, &file),
            seed: required_seed(&self.common, &file)?,
            samples: positive("samples", layer(self.samples, file.samples).unwrap_or(40))?,
            travel_time: travel_time(self.travel_time, &file)?,
        })
    }
}

impl FitCopulaArgs {
    pub fn resolve(&self) -> Result<FitCopulaRun> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let iterations = positive("iterations", layer(self.iterations, file.iterations).unwrap_or(1000))?;
        Ok(FitCopulaRun {
            input: layer(self.input.clone(), file.input.clone()).ok_or_else(|| anyhow!("--input is required"))?,
            has_header: !(self.no_header || file.no_header.unwrap_or(false)),
            out_dir: out_dir(&self.common, &file),
            seed: required_seed(&self.common, &file)?,
            timing: self.common.timing || file.timing.unwrap_or(false),
            iterations,
            travel_time: travel_time(self.travel_time, &file)?,
            sampler: layer(self.sampler, file.sampler()?).unwrap_or_default(),
            burn_in: layer(self.burn_in, file.burn_in).unwrap_or(iterations / 5),
            thin: positive("thin", layer(self.thin, file.thin).unwrap_or(1))?,
            df: layer(self.df, file.df),
            chains: positive("chains", layer(self.chains, file.chains).unwrap_or(1))?,
        })
    }
}

impl FitFactorArgs {
    pub fn resolve(&self) -> Result<FitFactorRun> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let seed = required_seed(&self.common, &file)?;
        let synthetic = layer(self.synthetic, file.synthetic()?);
        let input = layer(self.input.clone(), file.input.clone());
        let data = match (synthetic, input) {
            (Some(_), Some(_)) => bail!("--synthetic and --input are mutually exclusive"),
            (None, None) => bail!("either --input or --synthetic p,k,M,n is required"),
            (Some(spec), None) => FactorData::Synthetic {
                spec,
                data_seed: layer(self.data_seed, file.data_seed).unwrap_or(seed),
            },
            (None, Some(input)) => FactorData::File {
                input,
                has_header: !(self.no_header || file.no_header.unwrap_or(false)),
                truth: layer(self.truth.clone(), file.truth.clone()),
            },
        };
        let default_k = match &data {
            FactorData::Synthetic { spec, .. } => spec.k,
            FactorData::File { .. } => 1,
        };
        let iterations = positive("iterations", layer(self.iterations, file.iterations).unwrap_or(1000))?;
        Ok(FitFactorRun {
            data,
            out_dir: out_dir(&self.common, &file),
            seed,
            timing: self.common.timing || file.timing.unwrap_or(false),
            factors: layer(self.factors, file.factors).unwrap_or(default_k),
            iterations,
            travel_time: travel_time(self.travel_time, &file)?,
            sampler: layer(self.sampler, file.sampler()?).unwrap_or_default(),
            burn_in: layer(self.burn_in, file.burn_in).unwrap_or(iterations / 2),
            interweave: !(self.no_interweave || file.no_interweave.unwrap_or(false)),
            loadings_scale: layer(self.loadings_scale, file.loadings_scale).unwrap_or(1.0),
            bins: positive("bins", layer(self.bins, file.bins).unwrap_or(30))?,
            chains: positive("chains", layer(self.chains, file.chains).unwrap_or(1))?,
        })
    }
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<BenchRun> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let sizes = layer(self.sizes.clone(), file.sizes.clone()).unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
        if sizes.is_empty() || sizes.iter().any(|&n| n < 2) {
            bail!("--sizes needs at least one size, each at least 2");
        }
        let levels = layer(self.levels, file.levels).unwrap_or(2);
        if levels < 2 {
            bail!("--levels must be at least 2");
        }
        Ok(BenchRun {
            out_dir: out_dir(&self.common, &file),
            seed: required_seed(&self.common, &file)?,
            sizes,
            levels,
            repeats: positive("repeats", layer(self.repeats, file.repeats).unwrap_or(20))?,
            brute_force_limit: layer(self.brute_force_limit, file.brute_force_limit).unwrap_or(10_000),
            travel_time: travel_time(self.travel_time, &file)?,
        })
    }
}
