//! Envelope collision-search benchmark.
//!
//! Families mimic a latent column mid-trajectory: positions are sorted
//! standard normal draws assigned to equiprobable levels in order, velocities
//! are independent standard normals.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use copula_hmc::data::{build_level_partition, LevelPartition};
use copula_hmc::envelope::{brute_force_crossing, walk_envelope, SinusoidFamily};
use copula_hmc::Result;

pub fn random_family<R: Rng + ?Sized>(n: usize, levels: usize, rng: &mut R) -> (SinusoidFamily, LevelPartition) {
    let mut positions: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    positions.sort_by(f64::total_cmp);
    // Row i sits at rank order[i].
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let codes: Vec<i64> = order.iter().map(|&r| (r * levels / n) as i64).collect();
    let b: Vec<f64> = order.iter().map(|&r| positions[r]).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let family = SinusoidFamily { mu: vec![0.0; n], a, b };
    (family, build_level_partition(&codes))
}

/// Measurements at one column length.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub calls: usize,
    pub hits: usize,
    pub mean_steps: f64,
    pub max_steps: usize,
    pub fallbacks: usize,
    /// `None` when the all-pairs scan was skipped.
    pub agree: Option<bool>,
    pub envelope_ns: f64,
    pub brute_ns: Option<f64>,
}

pub fn bench_size(n: usize, levels: usize, repeats: usize, horizon: f64, brute: bool, seed: u64) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    let mut row = BenchRow {
        n,
        calls: repeats,
        hits: 0,
        mean_steps: 0.0,
        max_steps: 0,
        fallbacks: 0,
        agree: brute.then_some(true),
        envelope_ns: 0.0,
        brute_ns: brute.then_some(0.0),
    };
    let mut steps = 0usize;
    for _ in 0..repeats {
        let (family, partition) = random_family(n, levels, &mut rng);
        let clock = Instant::now();
        let walk = walk_envelope(&family, &partition, 0.0, horizon)?;
        row.envelope_ns += clock.elapsed().as_nanos() as f64;
        steps += walk.envelope_steps;
        row.max_steps = row.max_steps.max(walk.envelope_steps);
        row.fallbacks += usize::from(walk.fell_back);
        row.hits += usize::from(walk.hit.is_some());
        if brute {
            let clock = Instant::now();
            let scan = brute_force_crossing(&family, &partition, 0.0, horizon)?;
            *row.brute_ns.as_mut().unwrap() += clock.elapsed().as_nanos() as f64;
            let same = match (walk.hit, scan) {
                (None, None) => true,
                (Some(a), Some(b)) => (a.time - b.time).abs() <= 1e-10 && (a.lower, a.upper) == (b.lower, b.upper),
                _ => false,
            };
            if !same {
                row.agree = Some(false);
            }
        }
    }
    row.mean_steps = steps as f64 / repeats as f64;
    row.envelope_ns /= repeats as f64;
    if let Some(b) = row.brute_ns.as_mut() {
        *b /= repeats as f64;
    }
    Ok(row)
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
