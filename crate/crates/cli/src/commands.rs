//! Subcommand drivers. Each writes its files into the configured output
//! directory and returns a small report for printing.
//!
//! Wall-clock measurements only ever go to `timing.csv` (and `slopes.csv`
//! for the benchmark); every other file is a pure function of the inputs
//! and the seed.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use copula_hmc::data::{load_dataset, OrdinalDataset};
use copula_hmc::factor::{generate_synthetic, run_factor_chain, FactorConfig, FactorOutput};
use copula_hmc::gaussian::{CorrelationMatrix, WishartPrior};
use copula_hmc::gcerl::{run_chain, ChainOutput, GcerlChainConfig};
use copula_hmc::hmc::{sample_tmvn, HmcConfig};

use crate::bench::{bench_size, log_log_slope, BenchRow};
use crate::config::{BenchRun, FactorData, FitCopulaRun, FitFactorRun, SampleTmvnRun};
use crate::ess::compute_ess;
use crate::output::{fmt_f64, read_matrix, strings, OutputDir};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn entry(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn hmc_entries(cfg: &HmcConfig) -> Vec<(String, String)> {
    vec![
        entry("travel_time", fmt_f64(cfg.travel_time)),
        entry("travel_time_jitter", cfg.jitter),
        entry("grazing_epsilon", fmt_f64(cfg.grazing_epsilon)),
        entry("max_bounces", cfg.max_bounces.map_or("10*d+100".to_string(), |m| m.to_string())),
    ]
}

/// Upper-triangle index pairs, 1-based for output.
fn upper_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

/// Moments of one `sample-tmvn` coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSummary {
    pub mean: f64,
    pub variance: f64,
    pub ess: f64,
}

#[derive(Clone, Debug)]
pub struct TmvnReport {
    pub out_dir: PathBuf,
    pub samples: DMatrix<f64>,
    pub coordinates: Vec<CoordinateSummary>,
}

pub fn cmd_sample_tmvn(run: &SampleTmvnRun) -> Result<TmvnReport> {
    let spec = crate::tmvn_spec::TmvnSpec::load(&run.input)?;
    let target = spec.target()?;
    let walls = spec.constraints()?;
    let start = spec.start_point();
    if let Some((wall, slack)) = walls.first_violation(&start) {
        bail!("infeasible starting point: wall {} (line order) violated, slack {slack:e}", wall + 1);
    }
    let cfg = HmcConfig::with_travel_time(run.travel_time);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let draws = sample_tmvn(&target, &walls, &start, &cfg, run.samples, &mut rng)?;
    let d = spec.dim();

    let out = OutputDir::create(&run.out_dir)?;
    let mut header = vec!["sample".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.push("bounces".into());
    let rows = (0..run.samples).map(|k| {
        let mut row = vec![(k + 1).to_string()];
        row.extend((0..d).map(|i| fmt_f64(draws.samples[(k, i)])));
        row.push(draws.bounces[k].to_string());
        row
    });
    out.write_csv("trace.csv", &header, rows)?;

    let coordinates: Vec<CoordinateSummary> = (0..d)
        .map(|i| {
            let xs: Vec<f64> = draws.samples.column(i).iter().copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let variance = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let ess = compute_ess(&xs).map_or(n, |e| e.ess);
            CoordinateSummary { mean, variance, ess }
        })
        .collect();
    out.write_csv(
        "summary.csv",
        &strings(&["coordinate", "mean", "variance", "ess", "mcse_mean"]),
        coordinates.iter().enumerate().map(|(i, c)| {
            vec![
                (i + 1).to_string(),
                fmt_f64(c.mean),
                fmt_f64(c.variance),
                fmt_f64(c.ess),
                fmt_f64((c.variance / c.ess).sqrt()),
            ]
        }),
    )?;
    let mut manifest = vec![
        entry("command", "sample-tmvn"),
        entry("version", VERSION),
        entry("input", run.input.display()),
        entry("seed", run.seed),
        entry("samples", run.samples),
        entry("dimension", d),
        entry("walls", spec.walls.len()),
    ];
    manifest.extend(hmc_entries(&cfg));
    out.write_manifest(&manifest)?;
    Ok(TmvnReport {
        out_dir: run.out_dir.clone(),
        samples: draws.samples,
        coordinates,
    })
}

/// Output directory of chain `c` out of `chains`.
fn chain_dir(root: &OutputDir, c: usize, chains: usize) -> Result<OutputDir> {
    if chains == 1 {
        Ok(root.clone())
    } else {
        root.subdir(&format!("chain-{}", c + 1))
    }
}

/// Runs `chains` closures concurrently, results in chain order.
fn run_chains<T: Send>(chains: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains).map(|c| s.spawn({
            let f = &f;
            move || f(c)
        })).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| bail!("chain thread panicked")))
            .collect()
    })
}

fn write_timing(out: &OutputDir, chain: &ChainOutput) -> Result<()> {
    out.write_csv(
        "timing.csv",
        &strings(&["iteration", "column_ns", "covariance_ns", "search_ns", "total_ns"]),
        chain.timings.iter().enumerate().map(|(k, t)| {
            vec![(k + 1).to_string(), t.column_ns.to_string(), t.covariance_ns.to_string(), t.search_ns.to_string(), t.total_ns.to_string()]
        }),
    )?;
    Ok(())
}

fn write_correlation_summary(out: &OutputDir, chain: &ChainOutput) -> Result<()> {
    let p = chain.samples[0].dim();
    let (mean, median) = (chain.posterior_mean(), chain.posterior_median());
    let retained: Vec<usize> = chain.retained().collect();
    out.write_csv(
        "summary.csv",
        &strings(&["row", "col", "mean", "median", "ess"]),
        upper_pairs(p).into_iter().map(|(i, j)| {
            let series: Vec<f64> = retained.iter().map(|&k| chain.samples[k].get(i, j)).collect();
            let ess = compute_ess(&series).map_or(series.len() as f64, |e| e.ess);
            vec![(i + 1).to_string(), (j + 1).to_string(), fmt_f64(mean.get(i, j)), fmt_f64(median.get(i, j)), fmt_f64(ess)]
        }),
    )?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CopulaReport {
    pub out_dir: PathBuf,
    pub posterior_mean: CorrelationMatrix,
    pub chain: ChainOutput,
}

pub fn cmd_fit_copula(run: &FitCopulaRun) -> Result<Vec<CopulaReport>> {
    let dataset = load_dataset(&run.input, run.has_header)?;
    let p = dataset.p();
    if p < 2 {
        bail!("fit-copula needs at least 2 columns; a correlation matrix of one variable is trivially 1");
    }
    if run.burn_in >= run.iterations {
        bail!("--burn-in {} must be below --iterations {}", run.burn_in, run.iterations);
    }
    let prior = run
        .df
        .map(|df| WishartPrior::new(df, DMatrix::identity(p, p) * df))
        .transpose()?;
    let root = OutputDir::create(&run.out_dir)?;
    let reports = run_chains(run.chains, |c| {
        let seed = run.seed.wrapping_add(c as u64);
        let cfg = GcerlChainConfig {
            iterations: run.iterations,
            hmc: HmcConfig::with_travel_time(run.travel_time),
            prior: prior.clone(),
            seed,
            burn_in: run.burn_in,
            thin: run.thin,
            sampler: run.sampler,
            ..Default::default()
        };
        let chain = run_chain(&dataset, &cfg).with_context(|| format!("chain {}", c + 1))?;
        let out = chain_dir(&root, c, run.chains)?;
        let pairs = upper_pairs(p);
        let mut header = strings(&["iteration", "bounces", "envelope_steps", "fallbacks"]);
        header.extend(pairs.iter().map(|(i, j)| format!("c_{}_{}", i + 1, j + 1)));
        out.write_csv(
            "trace.csv",
            &header,
            chain.samples.iter().zip(&chain.diagnostics).enumerate().map(|(k, (cm, d))| {
                let mut row = vec![(k + 1).to_string(), d.bounces.to_string(), d.envelope_steps.to_string(), d.fallbacks.to_string()];
                row.extend(pairs.iter().map(|&(i, j)| fmt_f64(cm.get(i, j))));
                row
            }),
        )?;
        write_correlation_summary(&out, &chain)?;
        if run.timing {
            write_timing(&out, &chain)?;
        }
        let resolved_prior = cfg.prior.clone().unwrap_or_else(|| WishartPrior::default_for(p));
        let mut manifest = vec![
            entry("command", "fit-copula"),
            entry("version", VERSION),
            entry("input", run.input.display()),
            entry("has_header", run.has_header),
            entry("n", dataset.n()),
            entry("p", p),
            entry("seed", seed),
            entry("chain", c + 1),
            entry("chains", run.chains),
            entry("iterations", run.iterations),
            entry("sampler", run.sampler),
            entry("burn_in", run.burn_in),
            entry("thin", run.thin),
            entry("df", fmt_f64(resolved_prior.df)),
            entry("scale", format!("{}*I", fmt_f64(resolved_prior.df))),
            entry("column_order", "fixed"),
            entry("collision_search", "envelope"),
        ];
        manifest.extend(hmc_entries(&cfg.hmc));
        out.write_manifest(&manifest)?;
        Ok(CopulaReport {
            out_dir: out.root().to_path_buf(),
            posterior_mean: chain.posterior_mean(),
            chain,
        })
    })?;
    Ok(reports)
}

fn dataset_rows(dataset: &OrdinalDataset) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..dataset.n()).map(move |i| (0..dataset.p()).map(|j| dataset.value(i, j).to_string()).collect())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<String>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect()).collect()
}

fn load_truth(path: &std::path::Path, p: usize) -> Result<CorrelationMatrix> {
    let rows = read_matrix(path)?;
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        bail!("{}: expected a {p}x{p} matrix", path.display());
    }
    let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
    for i in 0..p {
        if m[(i, i)] != 1.0 {
            bail!("{}: diagonal entry {} is {}, not 1", path.display(), i + 1, m[(i, i)]);
        }
        for j in 0..p {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 || m[(i, j)].abs() > 1.0 {
                bail!("{}: not a correlation matrix at ({}, {})", path.display(), i + 1, j + 1);
            }
        }
    }
    let upper: Vec<f64> = upper_pairs(p).into_iter().map(|(i, j)| m[(i, j)]).collect();
    Ok(CorrelationMatrix::from_upper_triangle(p, &upper)?)
}

#[derive(Clone, Debug)]
pub struct FactorReport {
    pub out_dir: PathBuf,
    pub output: FactorOutput,
}

pub fn cmd_fit_factor(run: &FitFactorRun) -> Result<Vec<FactorReport>> {
    let root = OutputDir::create(&run.out_dir)?;
    let mut data_entries = Vec::new();
    let (dataset, truth) = match &run.data {
        FactorData::File { input, has_header, truth: truth_path } => {
            let dataset = load_dataset(input, *has_header)?;
            let truth = truth_path.as_deref().map(|t| load_truth(t, dataset.p())).transpose()?;
            data_entries.push(entry("input", input.display()));
            data_entries.push(entry("has_header", has_header));
            if let Some(t) = truth_path {
                data_entries.push(entry("truth", t.display()));
            }
            (dataset, truth)
        }
        FactorData::Synthetic { spec, data_seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*data_seed);
            let syn = generate_synthetic(spec.p, spec.k, spec.levels, spec.n, &mut rng)?;
            let header: Vec<String> = (1..=spec.p).map(|j| format!("v{j}")).collect();
            root.write_csv("data.csv", &header, dataset_rows(&syn.dataset))?;
            root.write_csv("truth.csv", &header, matrix_rows(syn.truth.matrix()))?;
            data_entries.push(entry("synthetic", spec));
            data_entries.push(entry("data_seed", data_seed));
            (syn.dataset, Some(syn.truth))
        }
    };
    let p = dataset.p();
    if run.factors >= p {
        bail!("--factors {} must be below the number of variables p = {p}", run.factors);
    }
    let reports = run_chains(run.chains, |c| {
        let seed = run.seed.wrapping_add(c as u64);
        let cfg = FactorConfig {
            k: run.factors,
            iterations: run.iterations,
            hmc: HmcConfig::with_travel_time(run.travel_time),
            interweave: run.interweave,
            seed,
            loadings_scale: run.loadings_scale,
            sampler: run.sampler,
            burn_in: run.burn_in,
            ..Default::default()
        };
        let output = run_factor_chain(&dataset, truth.as_ref(), &cfg).with_context(|| format!("chain {}", c + 1))?;
        let out = chain_dir(&root, c, run.chains)?;
        let mut header = vec!["iteration".to_string()];
        if output.rmse.is_some() {
            header.push("rmse".into());
        }
        header.extend(strings(&["bounces", "envelope_steps", "fallbacks"]));
        out.write_csv(
            "trace.csv",
            &header,
            output.chain.diagnostics.iter().enumerate().map(|(k, d)| {
                let mut row = vec![(k + 1).to_string()];
                if let Some(tr) = &output.rmse {
                    row.push(fmt_f64(tr.values[k]));
                }
                row.extend([d.bounces.to_string(), d.envelope_steps.to_string(), d.fallbacks.to_string()]);
                row
            }),
        )?;
        write_correlation_summary(&out, &output.chain)?;
        if let Some(tr) = &output.rmse {
            out.write_csv(
                "histogram.csv",
                &strings(&["lower", "upper", "count"]),
                tr.histogram(run.bins).iter().map(|b| vec![fmt_f64(b.lower), fmt_f64(b.upper), b.count.to_string()]),
            )?;
            let tail = 2000.min(tr.values.len());
            let post = tr.post_burn_in();
            let ess = compute_ess(post).map_or(post.len() as f64, |e| e.ess);
            out.write_csv(
                "rmse_summary.csv",
                &strings(&["statistic", "value"]),
                [
                    ("final_median", tr.plateau(tail)),
                    ("final_window", tail as f64),
                    ("post_burn_in_mean", post.iter().sum::<f64>() / post.len() as f64),
                    ("post_burn_in_variance", tr.variance()),
                    ("post_burn_in_ess", ess),
                ]
                .into_iter()
                .map(|(k, v)| vec![k.to_string(), fmt_f64(v)]),
            )?;
        }
        if run.timing {
            write_timing(&out, &output.chain)?;
        }
        let mut manifest = vec![entry("command", "fit-factor"), entry("version", VERSION)];
        manifest.extend(data_entries.iter().cloned());
        manifest.extend([
            entry("n", dataset.n()),
            entry("p", p),
            entry("factors", run.factors),
            entry("seed", seed),
            entry("chain", c + 1),
            entry("chains", run.chains),
            entry("iterations", run.iterations),
            entry("sampler", run.sampler),
            entry("burn_in", run.burn_in),
            entry("interweave", run.interweave),
            entry("loadings_scale", fmt_f64(run.loadings_scale)),
            entry("residual_variance", fmt_f64(1.0)),
            entry("histogram_bins", run.bins),
            entry("collision_search", "envelope"),
        ]);
        manifest.extend(hmc_entries(&cfg.hmc));
        out.write_manifest(&manifest)?;
        Ok(FactorReport {
            out_dir: out.root().to_path_buf(),
            output,
        })
    })?;
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub envelope_slope: Option<f64>,
    pub brute_slope: Option<f64>,
}

pub fn cmd_bench_envelope(run: &BenchRun) -> Result<BenchReport> {
    let rows = run
        .sizes
        .iter()
        .map(|&n| {
            bench_size(n, run.levels, run.repeats, run.travel_time, n <= run.brute_force_limit, run.seed)
                .with_context(|| format!("benchmark at n = {n}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let env: Vec<f64> = rows.iter().map(|r| r.envelope_ns).collect();
    let (bn, bt): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.brute_ns.map(|t| (r.n as f64, t))).unzip();
    let report = BenchReport {
        envelope_slope: log_log_slope(&ns, &env),
        brute_slope: log_log_slope(&bn, &bt),
        rows,
    };

    let out = OutputDir::create(&run.out_dir)?;
    out.write_csv(
        "scaling.csv",
        &strings(&["n", "calls", "hits", "mean_envelope_steps", "max_envelope_steps", "fallbacks", "brute_force_checked", "agree"]),
        report.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.calls.to_string(),
                r.hits.to_string(),
                fmt_f64(r.mean_steps),
                r.max_steps.to_string(),
                r.fallbacks.to_string(),
                r.agree.is_some().to_string(),
                r.agree.map_or(String::new(), |a| a.to_string()),
            ]
        }),
    )?;
    out.write_csv(
        "timing.csv",
        &strings(&["n", "envelope_ns_per_call", "brute_force_ns_per_call"]),
        report.rows.iter().map(|r| vec![r.n.to_string(), fmt_f64(r.envelope_ns), r.brute_ns.map_or(String::new(), fmt_f64)]),
    )?;
    out.write_csv(
        "slopes.csv",
        &strings(&["method", "log_log_slope"]),
        [("envelope", report.envelope_slope), ("brute_force", report.brute_slope)]
            .into_iter()
            .map(|(m, s)| vec![m.to_string(), s.map_or(String::new(), fmt_f64)]),
    )?;
    out.write_manifest(&[
        entry("command", "bench-envelope"),
        entry("version", VERSION),
        entry("seed", run.seed),
        entry("sizes", run.sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        entry("levels", run.levels),
        entry("repeats", run.repeats),
        entry("brute_force_limit", run.brute_force_limit),
        entry("horizon", fmt_f64(run.travel_time)),
    ])?;
    Ok(report)
}
