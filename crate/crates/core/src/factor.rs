//! Gaussian copula factor model.
//!
//! `Z_{:,j} = η·λ_j + ε_j` with `λ_j ~ N(0, τ·I_k)`, `ε_j ~ N(0, I_n)` and
//! factor rows `η_i ~ N(0, I_k)`; the implied correlation is
//! `cov_to_corr(ΛΛᵀ + I)`. Each loadings row is sampled jointly with its
//! latent column by exact HMC under the rank constraints of that column.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::data::{LevelPartition, OrdinalDataset};
use crate::error::{Error, Result};
use crate::gaussian::{cholesky, cov_to_corr, CorrelationMatrix};
use crate::gcerl::{
    gibbs_sweep_column, init_latent, median, simulate_ordinal, ChainOutput, IterationDiagnostics, PhaseTimings,
    SamplerKind,
};
use crate::hmc::HmcConfig;
use crate::rank_hmc::{latent_from_whitened, rank_hmc_step, CollisionSearch, LatentMap, RankStepStats};
use crate::rng::{StreamFactory, TAG_FACTORS, TAG_INIT, TAG_INIT_FACTORS, TAG_INTERWEAVE};

/// `C = cov_to_corr(ΛΛᵀ + I)`.
pub fn implied_correlation(loadings: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let p = loadings.nrows();
    cov_to_corr(&(loadings * loadings.transpose() + DMatrix::identity(p, p)))
}

/// Root mean square difference over the strict upper triangle.
pub fn rmse(estimate: &CorrelationMatrix, truth: &CorrelationMatrix) -> f64 {
    let (a, b) = (estimate.upper_triangle(), truth.upper_triangle());
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorConfig {
    /// Number of latent factors `k`.
    pub k: usize,
    pub iterations: usize,
    pub hmc: HmcConfig,
    /// Gibbs sweep over `Z` after the factor update. Only used by the HMC
    /// sampler; the Gibbs baseline already sweeps `Z` entrywise.
    pub interweave: bool,
    pub seed: u64,
    /// Prior variance `τ` of each loading.
    pub loadings_scale: f64,
    pub sampler: SamplerKind,
    pub search: CollisionSearch,
    pub burn_in: usize,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            k: 1,
            iterations: 1000,
            hmc: HmcConfig::default(),
            interweave: true,
            seed: 0,
            loadings_scale: 1.0,
            sampler: SamplerKind::Hmc,
            search: CollisionSearch::Envelope,
            burn_in: 0,
        }
    }
}

impl FactorConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k >= p {
            return Err(Error::InvalidArgument(format!("factor count k = {} must be below p = {p}", self.k)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} leaves no iterations out of {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.loadings_scale > 0.0) || !self.loadings_scale.is_finite() {
            return Err(Error::InvalidArgument(format!("loadings scale {} must be positive", self.loadings_scale)));
        }
        self.hmc.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModelState {
    /// `Λ`, `p×k`.
    pub loadings: DMatrix<f64>,
    /// `η`, `n×k`.
    pub factors: DMatrix<f64>,
    /// `Z`, `n×p`.
    pub z: DMatrix<f64>,
    pub iteration: usize,
}

/// Whitened coordinates `ξ = (λ_j/√τ, Z_{:,j} − ηλ_j)`, mapped to the column by
/// `z = √τ·η·ξ_head + ξ_tail`.
struct FactorMap {
    /// `√τ·η`, row-major `n×k`.
    scaled: Vec<f64>,
    k: usize,
    zeros: Vec<f64>,
}

impl FactorMap {
    fn new(factors: &DMatrix<f64>, loadings_scale: f64) -> Self {
        let (n, k) = factors.shape();
        let s = loadings_scale.sqrt();
        let mut scaled = Vec::with_capacity(n * k);
        for i in 0..n {
            for m in 0..k {
                scaled.push(s * factors[(i, m)]);
            }
        }
        Self { scaled, k, zeros: vec![0.0; n] }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.scaled[i * self.k..(i + 1) * self.k]
    }
}

impl LatentMap for FactorMap {
    fn whitened_dim(&self) -> usize {
        self.k + self.zeros.len()
    }

    fn len(&self) -> usize {
        self.zeros.len()
    }

    fn offset(&self) -> &[f64] {
        &self.zeros
    }

    fn project(&self, xi: &[f64], out: &mut [f64]) {
        let (head, tail) = xi.split_at(self.k);
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (g, h) in self.row(i).iter().zip(head) {
                s += g * h;
            }
            *o = s + tail[i];
        }
    }

    fn reflect(&self, v: &mut [f64], lower: usize, upper: usize) {
        let k = self.k;
        let (gl, gu) = (self.row(lower), self.row(upper));
        let mut dot = 0.0;
        let mut nn = 0.0;
        for m in 0..k {
            let d = gl[m] - gu[m];
            dot += d * v[m];
            nn += d * d;
        }
        dot += v[k + lower] - v[k + upper];
        nn += 2.0;
        let coef = 2.0 * dot / nn;
        for m in 0..k {
            v[m] -= coef * (gl[m] - gu[m]);
        }
        v[k + lower] -= coef;
        v[k + upper] += coef;
    }
}

fn check_column(z: &DMatrix<f64>, partition: &LevelPartition, j: usize) -> Result<()> {
    match partition.first_violation(z.column(j).as_slice()) {
        Some((lower, upper)) => Err(Error::ConstraintViolation { column: j, lower, upper }),
        None => Ok(()),
    }
}

/// One exact-HMC draw of `(λ_j, Z_{:,j})` given `η`, rank constraints acting
/// on the `Z` block.
pub fn joint_row_column_update<R: Rng + ?Sized>(
    state: &mut FactorModelState,
    partition: &LevelPartition,
    j: usize,
    cfg: &FactorConfig,
    rng: &mut R,
) -> Result<RankStepStats> {
    let k = state.loadings.ncols();
    let n = state.z.nrows();
    let map = FactorMap::new(&state.factors, cfg.loadings_scale);
    let s = cfg.loadings_scale.sqrt();
    let mut xi = Vec::with_capacity(k + n);
    xi.extend((0..k).map(|m| state.loadings[(j, m)] / s));
    for i in 0..n {
        let mut fit = 0.0;
        for m in 0..k {
            fit += state.factors[(i, m)] * state.loadings[(j, m)];
        }
        xi.push(state.z[(i, j)] - fit);
    }
    let stats = rank_hmc_step(&map, partition, &mut xi, &cfg.hmc, cfg.search, rng)?;
    for m in 0..k {
        state.loadings[(j, m)] = s * xi[m];
    }
    let column = latent_from_whitened(&map, &xi);
    state.z.column_mut(j).copy_from_slice(&column);
    check_column(&state.z, partition, j)?;
    Ok(stats)
}

/// `η_i ~ N((I + ΛᵀΛ)⁻¹Λᵀz_i, (I + ΛᵀΛ)⁻¹)` for every row.
pub fn update_factors<R: Rng + ?Sized>(state: &mut FactorModelState, rng: &mut R) -> Result<()> {
    let k = state.loadings.ncols();
    if k == 0 {
        return Ok(());
    }
    let lambda = &state.loadings;
    let precision = DMatrix::<f64>::identity(k, k) + lambda.tr_mul(lambda);
    let chol = cholesky(&precision)?;
    let singular = || Error::NotPositiveDefinite { pivot: 0, value: 0.0 };
    // Q⁻¹ΛᵀZᵀ, one column per row of Z.
    let rhs = lambda.tr_mul(&state.z.transpose());
    let half = chol.solve_lower_triangular(&rhs).ok_or_else(singular)?;
    let means = chol.tr_solve_lower_triangular(&half).ok_or_else(singular)?;
    let n = state.z.nrows();
    // Column-major fill: the k draws of each row are consecutive.
    let noise = DMatrix::<f64>::from_fn(k, n, |_, _| rng.sample(StandardNormal));
    let spread = chol.tr_solve_lower_triangular(&noise).ok_or_else(singular)?;
    state.factors = (means + spread).transpose();
    Ok(())
}

/// Entrywise truncated-normal sweep of every column of `Z` given `Λ` and `η`.
pub fn interweave_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut FactorModelState,
    partitions: &[LevelPartition],
    rng: &mut R,
) -> Result<()> {
    let fitted = &state.factors * state.loadings.transpose();
    for (j, part) in partitions.iter().enumerate() {
        let mut column: Vec<f64> = state.z.column(j).iter().copied().collect();
        gibbs_sweep_column(&mut column, fitted.column(j).as_slice(), 1.0, part, rng);
        state.z.column_mut(j).copy_from_slice(&column);
        check_column(&state.z, part, j)?;
    }
    Ok(())
}

/// Gibbs baseline for one column: `λ_j | Z_{:,j}, η` from its Gaussian full
/// conditional, then an entrywise sweep of `Z_{:,j}`.
pub fn gibbs_row_column_update<R: Rng + ?Sized>(
    state: &mut FactorModelState,
    partition: &LevelPartition,
    j: usize,
    loadings_scale: f64,
    rng: &mut R,
) -> Result<()> {
    let k = state.loadings.ncols();
    if k > 0 {
        let eta = &state.factors;
        let precision = DMatrix::<f64>::identity(k, k) / loadings_scale + eta.tr_mul(eta);
        let chol = cholesky(&precision)?;
        let singular = || Error::NotPositiveDefinite { pivot: 0, value: 0.0 };
        let rhs = eta.tr_mul(&state.z.column(j));
        let mean = chol
            .tr_solve_lower_triangular(&chol.solve_lower_triangular(&rhs).ok_or_else(singular)?)
            .ok_or_else(singular)?;
        let w = nalgebra::DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        let draw = mean + chol.tr_solve_lower_triangular(&w).ok_or_else(singular)?;
        for m in 0..k {
            state.loadings[(j, m)] = draw[m];
        }
    }
    let fitted = &state.factors * state.loadings.row(j).transpose();
    let mut column: Vec<f64> = state.z.column(j).iter().copied().collect();
    gibbs_sweep_column(&mut column, fitted.as_slice(), 1.0, partition, rng);
    state.z.column_mut(j).copy_from_slice(&column);
    check_column(&state.z, partition, j)
}

/// RMSE of the implied correlation against the truth, per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseTrace {
    pub values: Vec<f64>,
    pub burn_in: usize,
}

/// One histogram bin `[lower, upper)`; the last bin is closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl RmseTrace {
    pub fn post_burn_in(&self) -> &[f64] {
        &self.values[self.burn_in.min(self.values.len())..]
    }

    /// Median of the final `last` values.
    pub fn plateau(&self, last: usize) -> f64 {
        let start = self.values.len().saturating_sub(last);
        median(&mut self.values[start..].to_vec())
    }

    /// Sample variance after burn-in.
    pub fn variance(&self) -> f64 {
        let xs = self.post_burn_in();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    }

    /// Equal-width histogram of the post-burn-in values.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin> {
        let xs = self.post_burn_in();
        if xs.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|b| HistogramBin {
                lower: lo + b as f64 * width,
                upper: if b + 1 == bins && hi > lo { hi } else { lo + (b + 1) as f64 * width },
                count: 0,
            })
            .collect();
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            out[b].count += 1;
        }
        out
    }
}

/// A factor chain that can be advanced one iteration at a time.
pub struct FactorChain {
    cfg: FactorConfig,
    partitions: Vec<LevelPartition>,
    streams: StreamFactory,
    state: FactorModelState,
}

impl FactorChain {
    /// Starts from normal scores for `Z`, `Λ = 0` and standard normal `η`.
    pub fn new(dataset: &OrdinalDataset, cfg: FactorConfig) -> Result<Self> {
        let (n, p) = (dataset.n(), dataset.p());
        cfg.validate(p)?;
        let partitions = dataset.partitions();
        let streams = StreamFactory::new(cfg.seed);
        let z = init_latent(dataset, &mut streams.stream(0, TAG_INIT));
        for (j, part) in partitions.iter().enumerate() {
            check_column(&z, part, j)?;
        }
        let mut rng = streams.stream(0, TAG_INIT_FACTORS);
        let factors = DMatrix::<f64>::from_fn(n, cfg.k, |_, _| rng.sample(StandardNormal));
        Ok(Self {
            state: FactorModelState {
                loadings: DMatrix::zeros(p, cfg.k),
                factors,
                z,
                iteration: 0,
            },
            cfg,
            partitions,
            streams,
        })
    }

    pub fn state(&self) -> &FactorModelState {
        &self.state
    }

    pub fn step(&mut self) -> Result<(CorrelationMatrix, IterationDiagnostics, PhaseTimings)> {
        let started = Instant::now();
        let iteration = self.state.iteration as u64 + 1;
        let mut diag = IterationDiagnostics::default();
        let mut timing = PhaseTimings::default();
        for (j, part) in self.partitions.iter().enumerate() {
            let mut rng = self.streams.stream(iteration, j as u64);
            match self.cfg.sampler {
                SamplerKind::Hmc => {
                    let stats = joint_row_column_update(&mut self.state, part, j, &self.cfg, &mut rng)?;
                    diag.add(&stats);
                    timing.search_ns += stats.search_ns;
                }
                SamplerKind::Gibbs => {
                    gibbs_row_column_update(&mut self.state, part, j, self.cfg.loadings_scale, &mut rng)?
                }
            }
        }
        timing.column_ns = started.elapsed().as_nanos() as u64;
        let factor_clock = Instant::now();
        update_factors(&mut self.state, &mut self.streams.stream(iteration, TAG_FACTORS))?;
        if self.cfg.interweave && self.cfg.sampler == SamplerKind::Hmc {
            interweave_gibbs_sweep(&mut self.state, &self.partitions, &mut self.streams.stream(iteration, TAG_INTERWEAVE))?;
        }
        let c = implied_correlation(&self.state.loadings)?;
        timing.covariance_ns = factor_clock.elapsed().as_nanos() as u64;
        timing.total_ns = started.elapsed().as_nanos() as u64;
        self.state.iteration += 1;
        Ok((c, diag, timing))
    }
}

#[derive(Clone, Debug)]
pub struct FactorOutput {
    /// Implied correlation after every iteration.
    pub chain: ChainOutput,
    pub rmse: Option<RmseTrace>,
    pub final_state: FactorModelState,
}

pub fn run_factor_chain(
    dataset: &OrdinalDataset,
    truth: Option<&CorrelationMatrix>,
    cfg: &FactorConfig,
) -> Result<FactorOutput> {
    if let Some(t) = truth {
        if t.dim() != dataset.p() {
            return Err(Error::Dimension(format!("truth is {0}x{0}, data has p = {1}", t.dim(), dataset.p())));
        }
    }
    let mut chain = FactorChain::new(dataset, cfg.clone())?;
    let mut out = ChainOutput {
        samples: Vec::with_capacity(cfg.iterations),
        diagnostics: Vec::with_capacity(cfg.iterations),
        timings: Vec::with_capacity(cfg.iterations),
        burn_in: cfg.burn_in,
        thin: 1,
        final_latent: DMatrix::zeros(0, 0),
    };
    let mut trace = truth.map(|_| RmseTrace {
        values: Vec::with_capacity(cfg.iterations),
        burn_in: cfg.burn_in,
    });
    for _ in 0..cfg.iterations {
        let (c, diag, timing) = chain.step()?;
        if let (Some(tr), Some(t)) = (trace.as_mut(), truth) {
            tr.values.push(rmse(&c, t));
        }
        out.samples.push(c);
        out.diagnostics.push(diag);
        out.timings.push(timing);
    }
    out.final_latent = chain.state.z.clone();
    Ok(FactorOutput {
        chain: out,
        rmse: trace,
        final_state: chain.state,
    })
}

/// Synthetic data with known low-rank correlation.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: OrdinalDataset,
    pub truth: CorrelationMatrix,
    pub loadings: DMatrix<f64>,
    /// Latent rows before discretisation.
    pub latent: DMatrix<f64>,
}

/// `Λ*` with standard normal entries, `C* = implied_correlation(Λ*)`, rows
/// from `N(0, C*)` cut into `levels` equiprobable categories.
pub fn generate_synthetic<R: Rng + ?Sized>(
    p: usize,
    k: usize,
    levels: usize,
    n: usize,
    rng: &mut R,
) -> Result<SyntheticData> {
    if k >= p {
        return Err(Error::InvalidArgument(format!("factor count k = {k} must be below p = {p}")));
    }
    let loadings = DMatrix::<f64>::from_row_iterator(p, k, (0..p * k).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let truth = implied_correlation(&loadings)?;
    let (dataset, latent) = simulate_ordinal(&truth, levels, n, rng)?;
    Ok(SyntheticData {
        dataset,
        truth,
        loadings,
        latent,
    })
}
