//! Gaussian copula with the extended rank likelihood.
//!
//! Each iteration updates the latent columns of `Z` one at a time given the
//! others (exact HMC with envelope collision search, or the univariate Gibbs
//! baseline), then resamples `V ~ IW(df + n, V0 + ZᵀZ)` and stores its
//! correlation matrix.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{LevelPartition, OrdinalDataset};
use crate::error::{Error, Result};
use crate::gaussian::{
    cholesky, conditional_weights, cov_to_corr, sample_inverse_wishart, ConditionalWeights, CorrelationMatrix,
    CovarianceMatrix, WishartPrior,
};
use crate::hmc::HmcConfig;
use crate::rank_hmc::{latent_from_whitened, rank_hmc_step, CollisionSearch, IsotropicMap, RankStepStats};
use crate::rng::{StreamFactory, TAG_COVARIANCE, TAG_INIT, TAG_SCAN};
use crate::truncnorm;

/// Column-update scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplerKind {
    /// Whole column by exact HMC.
    #[default]
    Hmc,
    /// One entry at a time from its univariate truncated normal.
    Gibbs,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Hmc => "hmc",
            SamplerKind::Gibbs => "gibbs",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmc" => Ok(SamplerKind::Hmc),
            "gibbs" => Ok(SamplerKind::Gibbs),
            other => Err(Error::InvalidArgument(format!("unknown sampler '{other}' (expected hmc or gibbs)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcerlChainConfig {
    pub iterations: usize,
    pub hmc: HmcConfig,
    /// Inverse-Wishart prior; `None` means `df = p + 2`, `V0 = df·I`.
    pub prior: Option<WishartPrior>,
    pub seed: u64,
    /// Leading iterations excluded from posterior summaries.
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in iteration in summaries.
    pub thin: usize,
    pub sampler: SamplerKind,
    pub search: CollisionSearch,
    /// Visit columns in a fresh random order each iteration.
    pub random_scan: bool,
    /// Hold `V` at this value instead of resampling it.
    pub fixed_covariance: Option<CovarianceMatrix>,
}

impl Default for GcerlChainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            hmc: HmcConfig::default(),
            prior: None,
            seed: 0,
            burn_in: 0,
            thin: 1,
            sampler: SamplerKind::Hmc,
            search: CollisionSearch::Envelope,
            random_scan: false,
            fixed_covariance: None,
        }
    }
}

impl GcerlChainConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} leaves no iterations out of {}",
                self.burn_in, self.iterations
            )));
        }
        if let Some(prior) = &self.prior {
            if prior.scale.nrows() != p {
                return Err(Error::Dimension(format!("prior scale is {0}x{0}, data has p = {p}", prior.scale.nrows())));
            }
        }
        if let Some(v) = &self.fixed_covariance {
            if v.dim() != p {
                return Err(Error::Dimension(format!("fixed covariance is {0}x{0}, data has p = {p}", v.dim())));
            }
        }
        self.hmc.validate()
    }
}

/// Counters for one iteration, summed over columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IterationDiagnostics {
    pub bounces: usize,
    pub envelope_steps: usize,
    pub fallbacks: usize,
}

impl IterationDiagnostics {
    pub(crate) fn add(&mut self, stats: &RankStepStats) {
        self.bounces += stats.bounces;
        self.envelope_steps += stats.envelope_steps;
        self.fallbacks += stats.fallbacks;
    }
}

/// Monotonic wall-clock per phase of one iteration, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub column_ns: u64,
    pub covariance_ns: u64,
    /// Part of `column_ns` spent in collision search.
    pub search_ns: u64,
    pub total_ns: u64,
}

/// Everything a chain produces. Timings are kept apart from the draws since
/// they are the only non-reproducible part.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// `C` after every iteration.
    pub samples: Vec<CorrelationMatrix>,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub timings: Vec<PhaseTimings>,
    pub burn_in: usize,
    pub thin: usize,
    pub final_latent: DMatrix<f64>,
}

impl ChainOutput {
    /// Indices of the iterations that enter posterior summaries.
    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        (self.burn_in..self.samples.len()).step_by(self.thin)
    }

    /// Elementwise mean of the retained samples.
    pub fn posterior_mean(&self) -> CorrelationMatrix {
        let p = self.samples[0].dim();
        let mut sum = DMatrix::<f64>::zeros(p, p);
        let mut count = 0usize;
        for k in self.retained() {
            sum += self.samples[k].matrix();
            count += 1;
        }
        summary_matrix(sum / count as f64)
    }

    /// Elementwise median of the retained samples.
    pub fn posterior_median(&self) -> CorrelationMatrix {
        let p = self.samples[0].dim();
        let mut out = DMatrix::<f64>::identity(p, p);
        for i in 0..p {
            for j in i + 1..p {
                let mut values: Vec<f64> = self.retained().map(|k| self.samples[k].get(i, j)).collect();
                let m = median(&mut values);
                out[(i, j)] = m;
                out[(j, i)] = m;
            }
        }
        summary_matrix(out)
    }

    /// Draws and counters agree exactly (timings ignored).
    pub fn same_draws(&self, other: &ChainOutput) -> bool {
        self.samples == other.samples && self.diagnostics == other.diagnostics && self.final_latent == other.final_latent
    }
}

fn summary_matrix(m: DMatrix<f64>) -> CorrelationMatrix {
    let p = m.nrows();
    let upper: Vec<f64> = (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    CorrelationMatrix::from_upper_triangle(p, &upper).expect("average of correlation matrices is a correlation matrix")
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Normal scores with random tie-breaking inside each level:
/// `Z_ij = Φ⁻¹(r_ij / (n + 1))`.
pub fn init_latent<R: Rng + ?Sized>(dataset: &OrdinalDataset, rng: &mut R) -> DMatrix<f64> {
    let (n, p) = (dataset.n(), dataset.p());
    let normal = Normal::standard();
    let mut z = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        let column = dataset.column(j);
        let keys: Vec<u64> = (0..n).map(|_| rng.random()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (column[i], keys[i], i));
        for (rank, &i) in order.iter().enumerate() {
            z[(i, j)] = normal.inverse_cdf((rank + 1) as f64 / (n + 1) as f64);
        }
    }
    z
}

fn check_column(z: &DMatrix<f64>, partition: &LevelPartition, j: usize) -> Result<()> {
    match partition.first_violation(z.column(j).as_slice()) {
        Some((lower, upper)) => Err(Error::ConstraintViolation { column: j, lower, upper }),
        None => Ok(()),
    }
}

/// Replaces column `j` by one exact-HMC draw from its rank-truncated
/// conditional `N(μ_j, σ_j²·I)`.
pub fn hmc_column_update<R: Rng + ?Sized>(
    z: &mut DMatrix<f64>,
    weights: &ConditionalWeights,
    partition: &LevelPartition,
    cfg: &HmcConfig,
    search: CollisionSearch,
    rng: &mut R,
) -> Result<RankStepStats> {
    let j = weights.column;
    let map = IsotropicMap {
        mean: weights.mean(z),
        sd: weights.variance.sqrt(),
    };
    let mut xi: Vec<f64> = z.column(j).iter().zip(&map.mean).map(|(x, m)| (x - m) / map.sd).collect();
    let stats = rank_hmc_step(&map, partition, &mut xi, cfg, search, rng)?;
    let updated = latent_from_whitened(&map, &xi);
    z.column_mut(j).copy_from_slice(&updated);
    check_column(z, partition, j)?;
    Ok(stats)
}

/// Level-by-level univariate truncated-normal sweep of one column with the
/// given per-row means and common standard deviation.
pub(crate) fn gibbs_sweep_column<R: Rng + ?Sized>(
    column: &mut [f64],
    mean: &[f64],
    sd: f64,
    partition: &LevelPartition,
    rng: &mut R,
) {
    let levels = partition.num_levels();
    for k in 0..levels {
        let lower = if k == 0 {
            f64::NEG_INFINITY
        } else {
            partition.rows(k - 1).iter().map(|&i| column[i]).fold(f64::NEG_INFINITY, f64::max)
        };
        let upper = if k + 1 == levels {
            f64::INFINITY
        } else {
            partition.rows(k + 1).iter().map(|&i| column[i]).fold(f64::INFINITY, f64::min)
        };
        for &i in partition.rows(k) {
            // Rounding can land a draw exactly on a bound; such draws are
            // repeated, and the current value kept if that persists.
            for _ in 0..100 {
                let x = if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
                    mean[i] + sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    truncnorm::sample(mean[i], sd, lower, upper, rng)
                };
                if x > lower && x < upper {
                    column[i] = x;
                    break;
                }
            }
        }
    }
}

/// Resamples every entry of column `j` from its univariate truncated normal
/// given the other entries.
pub fn gibbs_column_update<R: Rng + ?Sized>(
    z: &mut DMatrix<f64>,
    weights: &ConditionalWeights,
    partition: &LevelPartition,
    rng: &mut R,
) -> Result<()> {
    let j = weights.column;
    let mean = weights.mean(z);
    let sd = weights.variance.sqrt();
    let mut column: Vec<f64> = z.column(j).iter().copied().collect();
    gibbs_sweep_column(&mut column, &mean, sd, partition, rng);
    z.column_mut(j).copy_from_slice(&column);
    check_column(z, partition, j)
}

/// Current position of a chain.
#[derive(Clone, Debug)]
pub struct GcerlChainState {
    pub z: DMatrix<f64>,
    pub v: CovarianceMatrix,
    pub iteration: usize,
}

/// A chain that can be advanced one iteration at a time.
pub struct GcerlChain {
    cfg: GcerlChainConfig,
    prior: WishartPrior,
    partitions: Vec<LevelPartition>,
    streams: StreamFactory,
    state: GcerlChainState,
}

impl GcerlChain {
    pub fn new(dataset: &OrdinalDataset, cfg: GcerlChainConfig) -> Result<Self> {
        let p = dataset.p();
        cfg.validate(p)?;
        let partitions = dataset.partitions();
        let streams = StreamFactory::new(cfg.seed);
        let z = init_latent(dataset, &mut streams.stream(0, TAG_INIT));
        for (j, part) in partitions.iter().enumerate() {
            check_column(&z, part, j)?;
        }
        let v = cfg.fixed_covariance.clone().unwrap_or_else(|| CovarianceMatrix::identity(p));
        let prior = cfg.prior.clone().unwrap_or_else(|| WishartPrior::default_for(p));
        Ok(Self {
            cfg,
            prior,
            partitions,
            streams,
            state: GcerlChainState { z, v, iteration: 0 },
        })
    }

    pub fn state(&self) -> &GcerlChainState {
        &self.state
    }

    pub fn config(&self) -> &GcerlChainConfig {
        &self.cfg
    }

    fn column_order(&self, iteration: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.partitions.len()).collect();
        if self.cfg.random_scan {
            order.shuffle(&mut self.streams.stream(iteration, TAG_SCAN));
        }
        order
    }

    /// Runs one full iteration and returns `C` with its counters.
    pub fn step(&mut self) -> Result<(CorrelationMatrix, IterationDiagnostics, PhaseTimings)> {
        let started = Instant::now();
        let iteration = self.state.iteration as u64 + 1;
        let mut diag = IterationDiagnostics::default();
        let mut timing = PhaseTimings::default();

        for j in self.column_order(iteration) {
            let weights = conditional_weights(self.state.v.matrix(), j)?;
            let mut rng = self.streams.stream(iteration, j as u64);
            let part = &self.partitions[j];
            match self.cfg.sampler {
                SamplerKind::Hmc => {
                    let stats =
                        hmc_column_update(&mut self.state.z, &weights, part, &self.cfg.hmc, self.cfg.search, &mut rng)?;
                    diag.add(&stats);
                    timing.search_ns += stats.search_ns;
                }
                SamplerKind::Gibbs => gibbs_column_update(&mut self.state.z, &weights, part, &mut rng)?,
            }
        }
        timing.column_ns = started.elapsed().as_nanos() as u64;

        let resample = Instant::now();
        if self.cfg.fixed_covariance.is_none() {
            let cross = self.state.z.tr_mul(&self.state.z);
            let posterior = self.prior.posterior(self.state.z.nrows(), &cross);
            self.state.v = sample_inverse_wishart(&posterior, &mut self.streams.stream(iteration, TAG_COVARIANCE))?;
        }
        let c = cov_to_corr(self.state.v.matrix())?;
        timing.covariance_ns = resample.elapsed().as_nanos() as u64;
        timing.total_ns = started.elapsed().as_nanos() as u64;
        self.state.iteration += 1;
        Ok((c, diag, timing))
    }
}

/// Runs `cfg.iterations` iterations from the normal-scores start.
pub fn run_chain(dataset: &OrdinalDataset, cfg: &GcerlChainConfig) -> Result<ChainOutput> {
    let mut chain = GcerlChain::new(dataset, cfg.clone())?;
    let mut out = ChainOutput {
        samples: Vec::with_capacity(cfg.iterations),
        diagnostics: Vec::with_capacity(cfg.iterations),
        timings: Vec::with_capacity(cfg.iterations),
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        final_latent: DMatrix::zeros(0, 0),
    };
    for _ in 0..cfg.iterations {
        let (c, diag, timing) = chain.step()?;
        out.samples.push(c);
        out.diagnostics.push(diag);
        out.timings.push(timing);
    }
    out.final_latent = chain.state.z;
    Ok(out)
}

/// Draws `n` rows from `N(0, C)` and cuts every column into `levels`
/// equiprobable categories coded `0..levels`. Returns the data and the latent
/// rows.
pub fn simulate_ordinal<R: Rng + ?Sized>(
    corr: &CorrelationMatrix,
    levels: usize,
    n: usize,
    rng: &mut R,
) -> Result<(OrdinalDataset, DMatrix<f64>)> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 levels, got {levels}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one row".into()));
    }
    let p = corr.dim();
    let factor = cholesky(corr.matrix())?;
    let normal = Normal::standard();
    let cuts: Vec<f64> = (1..levels).map(|m| normal.inverse_cdf(m as f64 / levels as f64)).collect();
    let mut latent = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        for r in 0..p {
            latent[(i, r)] = (0..=r).map(|c| factor[(r, c)] * w[c]).sum();
        }
    }
    let columns: Vec<Vec<i64>> = (0..p)
        .map(|j| {
            (0..n)
                .map(|i| cuts.iter().take_while(|&&c| c < latent[(i, j)]).count() as i64)
                .collect()
        })
        .collect();
    Ok((OrdinalDataset::from_columns(columns, None)?, latent))
}
