//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use copula_hmc::data::OrdinalDataset;
use copula_hmc::envelope::{brute_force_crossing, walk_envelope};
use copula_hmc::factor::{generate_synthetic, run_factor_chain, FactorConfig};
use copula_hmc::gaussian::{CorrelationMatrix, CovarianceMatrix};
use copula_hmc::gcerl::{run_chain, simulate_ordinal, GcerlChainConfig, SamplerKind};
use copula_hmc::hmc::{sample_tmvn, ExactHmc, GaussianTarget, HmcConfig, LinearConstraintSet};
use copula_hmc_cli::bench::{bench_size, log_log_slope, random_family};
use copula_hmc_cli::ess::compute_ess;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standardised difference of two sample means; `chain` is autocorrelated,
/// `iid` is not.
fn mean_z(chain: &[f64], iid: &[f64]) -> Result<f64> {
    let ess = compute_ess(chain).context("chain too short for ESS")?.ess;
    let se = (variance(chain) / ess + variance(iid) / iid.len() as f64).sqrt();
    Ok((mean(chain) - mean(iid)).abs() / se)
}

fn squared_deviations(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect()
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Result<CovarianceMatrix> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(CovarianceMatrix::new(&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2)?)
}

fn random_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn tmvn_quadrant() -> Result<Outcome> {
    let n = 40_000;
    let clock = Instant::now();
    let walls = LinearConstraintSet::from_rows(&[(vec![-1.0, 0.0], 0.0), (vec![0.0, -1.0], 0.0)])?;
    let start = DVector::from_vec(vec![1.0, 1.0]);
    let draws = sample_tmvn(
        &GaussianTarget::standard(2),
        &walls,
        &start,
        &HmcConfig::default(),
        n,
        &mut ChaCha8Rng::seed_from_u64(101),
    )?;
    let elapsed = clock.elapsed();

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut oracle = [Vec::with_capacity(n), Vec::with_capacity(n)];
    while oracle[0].len() < n {
        let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if x >= 0.0 && y >= 0.0 {
            oracle[0].push(x);
            oracle[1].push(y);
        }
    }

    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (j, iid) in oracle.iter().enumerate() {
        let chain: Vec<f64> = draws.samples.column(j).iter().copied().collect();
        let zm = mean_z(&chain, iid)?;
        let zv = mean_z(&squared_deviations(&chain), &squared_deviations(iid))?;
        worst = worst.max(zm).max(zv);
        parts.push(format!(
            "x{}: mean {:.4}/{:.4} var {:.4}/{:.4}",
            j + 1,
            mean(&chain),
            mean(iid),
            variance(&chain),
            variance(iid)
        ));
    }
    let pass = worst <= 3.0 && elapsed < Duration::from_secs(60);
    Ok(Outcome::new(pass, format!("{}; worst z {worst:.2} (limit 3); {elapsed:.1?} (limit 60s)", parts.join("; "))))
}

struct EnergyProblem {
    sampler: ExactHmc,
    start: DVector<f64>,
}

fn energy_problem(rng: &mut ChaCha8Rng) -> Result<EnergyProblem> {
    let d = rng.random_range(2..=50);
    let mean = random_vector(d, rng);
    let cov = random_spd(d, rng)?;
    let start = &mean + random_vector(d, rng) * 0.5;
    let mut walls = LinearConstraintSet::new();
    for _ in 0..rng.random_range(1..=2 * d) {
        let normal = random_vector(d, rng);
        let slack: f64 = rng.sample::<f64, _>(Exp1) * normal.norm();
        let offset = normal.dot(&start) + slack;
        walls.push(normal, offset)?;
    }
    Ok(EnergyProblem { sampler: ExactHmc::new(GaussianTarget::new(mean, cov)?, walls)?, start })
}

fn energy_conservation() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = HmcConfig::default();
    let (mut kept, mut skipped, mut bounced, mut max_bounces) = (0usize, 0usize, 0usize, 0usize);
    let mut worst: f64 = 0.0;
    while kept < 10_000 {
        let problem = energy_problem(&mut rng)?;
        let mut x = problem.start.clone();
        for _ in 0..50 {
            let end = problem.sampler.step(&x, &cfg, &mut rng)?;
            x = end.position.clone();
            if end.bounces.len() > 20 {
                skipped += 1;
                continue;
            }
            let scale = end.energy_start.abs();
            worst = worst.max((end.energy_end - end.energy_start).abs() / scale);
            for b in &end.bounces {
                worst = worst.max((b.energy - end.energy_start).abs() / scale);
            }
            kept += 1;
            bounced += usize::from(!end.bounces.is_empty());
            max_bounces = max_bounces.max(end.bounces.len());
        }
    }
    let pass = worst <= 1e-8 && bounced > 0;
    Ok(Outcome::new(
        pass,
        format!(
            "{kept} trajectories ({bounced} with bounces, max {max_bounces}, {skipped} over 20 excluded); max relative drift {worst:.2e} (limit 1e-8)"
        ),
    ))
}

fn envelope_exactness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut agree, mut hits, mut hops) = (0usize, 0usize, 0usize);
    let mut first_mismatch = None;
    let cases = 1000;
    for case in 0..cases {
        let levels = rng.random_range(2..=8);
        let n = rng.random_range(levels.max(2)..=1000);
        let (mut family, partition) = random_family(n, levels, &mut rng);
        let speed = rng.random_range(0.2..3.0);
        family.a.iter_mut().for_each(|a| *a *= speed);
        let horizon = rng.random_range(0.05..TAU);
        let walk = walk_envelope(&family, &partition, 0.0, horizon)?;
        let scan = brute_force_crossing(&family, &partition, 0.0, horizon)?;
        hops += walk.envelope_steps;
        let same = match (walk.hit, scan) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                hits += 1;
                (a.time - b.time).abs() <= 1e-10 && (a.lower, a.upper) == (b.lower, b.upper)
            }
            _ => false,
        };
        if same {
            agree += 1;
        } else if first_mismatch.is_none() {
            first_mismatch = Some(format!("case {case}: envelope {:?} vs scan {:?}", walk.hit, scan));
        }
    }
    let mut detail = format!("{agree}/{cases} agree ({hits} hits, {hops} envelope steps in total)");
    if let Some(m) = first_mismatch {
        detail.push_str("; first mismatch ");
        detail.push_str(&m);
    }
    Ok(Outcome::new(agree == cases, detail))
}

fn envelope_scaling() -> Result<Outcome> {
    let clock = Instant::now();
    let sizes = [1_000usize, 10_000, 100_000];
    let mut rows = Vec::new();
    for &n in &sizes {
        rows.push(bench_size(n, 2, 20, FRAC_PI_2, false, 505)?);
    }
    let elapsed = clock.elapsed();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.envelope_ns).collect();
    let slope = log_log_slope(&xs, &ys).context("slope undefined")?;
    let steps = rows[2].mean_steps;
    let pass = slope <= 1.3 && steps <= 20.0 && elapsed < Duration::from_secs(600);
    let per: Vec<String> = rows.iter().map(|r| format!("n={} {:.0}us {:.2} steps", r.n, r.envelope_ns / 1e3, r.mean_steps)).collect();
    Ok(Outcome::new(
        pass,
        format!(
            "{}; slope {slope:.3} (limit 1.3); mean steps at 1e5 {steps:.2} (limit 20); {elapsed:.1?} (limit 600s)",
            per.join(", ")
        ),
    ))
}

fn gcerl_consistency() -> Result<Outcome> {
    let clock = Instant::now();
    let truth = CorrelationMatrix::from_upper_triangle(3, &[0.6, 0.3, 0.0])?;
    let (data, _) = simulate_ordinal(&truth, 3, 1000, &mut ChaCha8Rng::seed_from_u64(606))?;
    let fit = |sampler| {
        let cfg = GcerlChainConfig { iterations: 2000, burn_in: 400, seed: 607, sampler, ..Default::default() };
        run_chain(&data, &cfg)
    };
    let (hmc, gibbs) = thread::scope(|s| {
        let gibbs = s.spawn(|| fit(SamplerKind::Gibbs));
        (fit(SamplerKind::Hmc), gibbs.join().expect("gibbs thread panicked"))
    });
    let (hmc, gibbs) = (hmc?.posterior_mean().upper_triangle(), gibbs?.posterior_mean().upper_triangle());
    let elapsed = clock.elapsed();
    let target = truth.upper_triangle();
    let err = hmc.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gap = hmc.iter().zip(&gibbs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = err <= 0.1 && gap <= 0.05 && elapsed < Duration::from_secs(900);
    Ok(Outcome::new(
        pass,
        format!(
            "hmc {hmc:.3?} gibbs {gibbs:.3?} truth {target:.1?}; max error {err:.3} (limit 0.1); max gap {gap:.3} (limit 0.05); {elapsed:.1?} (limit 900s)"
        ),
    ))
}

fn factor_reproduction() -> Result<Outcome> {
    let syn = generate_synthetic(10, 3, 2, 1000, &mut ChaCha8Rng::seed_from_u64(3))?;
    let fit = |sampler| {
        let clock = Instant::now();
        let cfg = FactorConfig {
            k: 3,
            iterations: 10_000,
            burn_in: 5_000,
            seed: 4,
            sampler,
            hmc: HmcConfig::with_travel_time(FRAC_PI_2),
            ..Default::default()
        };
        let out = run_factor_chain(&syn.dataset, Some(&syn.truth), &cfg)?;
        let trace = out.rmse.context("no RMSE trace")?;
        anyhow::Ok((trace.plateau(2000), trace.variance(), clock.elapsed()))
    };
    let (hmc, gibbs) = thread::scope(|s| {
        let gibbs = s.spawn(|| fit(SamplerKind::Gibbs));
        (fit(SamplerKind::Hmc), gibbs.join().expect("gibbs thread panicked"))
    });
    let ((hp, hv, ht), (gp, gv, gt)) = (hmc?, gibbs?);
    let ratio = hv / gv;
    let pass = hp <= gp && ratio > 1.0 && ht.max(gt) <= Duration::from_secs(7200);
    Ok(Outcome::new(
        pass,
        format!(
            "plateau hmc {hp:.4} vs gibbs {gp:.4}; post-burn-in variance hmc {hv:.3e} vs gibbs {gv:.3e} (ratio {ratio:.2}); hmc {ht:.0?}, gibbs {gt:.0?}"
        ),
    ))
}

fn write_dataset(path: &Path, ds: &OrdinalDataset) -> Result<()> {
    let mut text: String = (1..=ds.p()).map(|j| format!("v{j}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..ds.n() {
        let row: Vec<String> = (0..ds.p()).map(|j| ds.value(i, j).to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    Ok(fs::write(path, text)?)
}

/// Every output file except the wall-clock ones, keyed by relative path.
fn snapshot(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if !matches!(path.file_name().and_then(|n| n.to_str()), Some("timing.csv" | "slopes.csv")) {
                files.insert(path.strip_prefix(root)?.to_path_buf(), fs::read(&path)?);
            }
        }
    }
    Ok(files)
}

fn run_binary(args: &[String], out: &Path) -> Result<()> {
    let result = Command::new(env!("CARGO_BIN_EXE_copula-hmc")).args(args).arg("--out-dir").arg(out).output()?;
    if !result.status.success() {
        bail!("{args:?} failed: {}", String::from_utf8_lossy(&result.stderr));
    }
    Ok(())
}

fn determinism() -> Result<Outcome> {
    let work = tempfile::tempdir()?;
    let spec = work.path().join("quadrant.txt");
    fs::write(&spec, "mean: 0 0\ncov: 1 0.3 0.3 1\nstart: 1 1\n-1 0 0\n0 -1 0\n")?;
    let truth = CorrelationMatrix::from_upper_triangle(3, &[0.5, 0.2, -0.1])?;
    let (ds, _) = simulate_ordinal(&truth, 4, 200, &mut ChaCha8Rng::seed_from_u64(707))?;
    let data = work.path().join("data.csv");
    write_dataset(&data, &ds)?;
    let (spec, data) = (spec.display().to_string(), data.display().to_string());

    let runs: Vec<Vec<&str>> = vec![
        vec!["sample-tmvn", "--input", &spec, "--samples", "300", "--seed", "1", "--timing"],
        vec!["fit-copula", "--input", &data, "--iterations", "60", "--chains", "2", "--seed", "2", "--timing"],
        vec!["fit-copula", "--input", &data, "--iterations", "60", "--sampler", "gibbs", "--seed", "2"],
        vec!["fit-factor", "--synthetic", "6,2,3,200", "--iterations", "40", "--seed", "3", "--timing"],
        vec!["fit-factor", "--synthetic", "6,2,3,200", "--iterations", "40", "--sampler", "gibbs", "--seed", "3"],
        vec!["fit-factor", "--input", &data, "--factors", "1", "--iterations", "30", "--seed", "4"],
        vec!["bench-envelope", "--sizes", "300,600,1200", "--repeats", "4", "--brute-force-limit", "600", "--seed", "5"],
    ];
    let mut compared = 0;
    for (k, args) in runs.iter().enumerate() {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let out = work.path().join(format!("run-{k}"));
        run_binary(&args, &out)?;
        let first = snapshot(&out)?;
        fs::remove_dir_all(&out)?;
        run_binary(&args, &out)?;
        let second = snapshot(&out)?;
        ensure!(!first.is_empty(), "{} wrote no files", args[0]);
        if first != second {
            let differing: Vec<_> = first.keys().filter(|p| first.get(*p) != second.get(*p)).collect();
            return Ok(Outcome::new(false, format!("{args:?} differs in {differing:?}")));
        }
        compared += first.len();
    }
    Ok(Outcome::new(true, format!("{} runs, {compared} files byte-identical across repeats", runs.len())))
}

fn reductions() -> Result<Outcome> {
    let truth = CorrelationMatrix::from_upper_triangle(4, &[0.5, 0.2, -0.3, 0.1, 0.0, 0.4])?;
    let (ds, _) = simulate_ordinal(&truth, 3, 300, &mut ChaCha8Rng::seed_from_u64(808))?;
    let factor = run_factor_chain(&ds, None, &FactorConfig { k: 0, iterations: 200, interweave: false, seed: 809, ..Default::default() })?;
    let copula = run_chain(
        &ds,
        &GcerlChainConfig {
            iterations: 200,
            seed: 809,
            fixed_covariance: Some(CovarianceMatrix::identity(4)),
            ..Default::default()
        },
    )?;
    let identical = factor.chain.same_draws(&copula);

    let mut rng = ChaCha8Rng::seed_from_u64(810);
    let cfg = HmcConfig::with_travel_time(TAU);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=50);
        let target = GaussianTarget::new(random_vector(d, &mut rng), random_spd(d, &mut rng)?)?;
        let start = target.mean() + random_vector(d, &mut rng);
        let velocity = random_vector(d, &mut rng);
        let sampler = ExactHmc::new(target, LinearConstraintSet::new())?;
        let end = sampler.run_trajectory(&start, &velocity, TAU, &cfg)?;
        worst = worst.max((end.position - &start).amax());
    }
    let pass = identical && worst <= 1e-10;
    Ok(Outcome::new(
        pass,
        format!("k=0 vs V=I chains identical: {identical}; T=2pi return error {worst:.2e} (limit 1e-10)"),
    ))
}

fn report(number: usize, name: &str, result: Result<Outcome>) -> bool {
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    println!("criterion {number} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "TMVN quadrant vs rejection oracle", tmvn_quadrant());
    all &= report(2, "energy conservation", energy_conservation());
    all &= report(3, "envelope vs all-pairs scan", envelope_exactness());
    all &= report(4, "envelope scaling", envelope_scaling());
    all &= report(5, "GCERL consistency", gcerl_consistency());
    all &= report(6, "factor model HMC vs Gibbs", factor_reproduction());
    all &= report(7, "determinism", determinism());
    all &= report(8, "reductions", reductions());
    if all {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("some acceptance criteria failed");
        ExitCode::FAILURE
    }
}
