//! Exact HMC for one latent column under rank-order constraints.
//!
//! The column `z ∈ ℝⁿ` is an affine image `z = offset + P·ξ` of whitened
//! coordinates `ξ ∈ ℝᴰ` that are standard normal a priori. Trajectories are
//! run in `ξ` space; their images are the sinusoids searched for the next
//! order violation, and each bounce reflects the whitened velocity about
//! `Pᵀ(e_lower − e_upper)`.

use std::time::Instant;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::data::LevelPartition;
use crate::envelope::{brute_force_crossing, walk_envelope, Crossing, SinusoidFamily};
use crate::error::{Error, Result};
use crate::hmc::HmcConfig;

/// Affine map from whitened coordinates to a latent column.
pub trait LatentMap {
    /// Dimension `D` of the whitened space.
    fn whitened_dim(&self) -> usize;
    /// Length `n` of the latent column.
    fn len(&self) -> usize;
    fn offset(&self) -> &[f64];
    /// `out = P·xi`.
    fn project(&self, xi: &[f64], out: &mut [f64]);
    /// Householder reflection of `v` about `Pᵀ(e_lower − e_upper)`.
    fn reflect(&self, v: &mut [f64], lower: usize, upper: usize);
}

/// `z = mean + sd·ξ`: the conditional of one copula column.
#[derive(Clone, Debug)]
pub struct IsotropicMap {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl LatentMap for IsotropicMap {
    fn whitened_dim(&self) -> usize {
        self.mean.len()
    }

    fn len(&self) -> usize {
        self.mean.len()
    }

    fn offset(&self) -> &[f64] {
        &self.mean
    }

    fn project(&self, xi: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xi) {
            *o = self.sd * x;
        }
    }

    fn reflect(&self, v: &mut [f64], lower: usize, upper: usize) {
        // normal ∝ e_lower − e_upper, |n|² = 2
        let coef = 2.0 * (v[lower] - v[upper]) / 2.0;
        v[lower] -= coef;
        v[upper] += coef;
    }
}

/// Which collision search drives the bounces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CollisionSearch {
    /// Envelope walk, `O(n·h)` per bounce.
    #[default]
    Envelope,
    /// Every constraint pair, `O(n²)` per bounce.
    BruteForce,
}

/// Work done by one column update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RankStepStats {
    pub bounces: usize,
    pub envelope_steps: usize,
    pub fallbacks: usize,
    /// Whitened Hamiltonian `½(|ξ|² + |ξ̇|²)` at the start and end.
    pub energy_start: f64,
    pub energy_end: f64,
    pub search_ns: u64,
}

fn energy(x: &[f64], v: &[f64]) -> f64 {
    0.5 * (x.iter().map(|a| a * a).sum::<f64>() + v.iter().map(|a| a * a).sum::<f64>())
}

/// Runs one trajectory of length `travel_time` from `xi` with whitened
/// velocity `v`, updating both in place.
pub fn run_rank_trajectory<M: LatentMap + ?Sized>(
    map: &M,
    partition: &LevelPartition,
    xi: &mut [f64],
    v: &mut [f64],
    travel_time: f64,
    cfg: &HmcConfig,
    search: CollisionSearch,
) -> Result<RankStepStats> {
    let d = map.whitened_dim();
    if xi.len() != d || v.len() != d || map.len() != partition.len() {
        return Err(Error::Dimension(format!(
            "whitened state {} / velocity {} / map {d}; column {} vs partition {}",
            xi.len(),
            v.len(),
            map.len(),
            partition.len()
        )));
    }
    let cap = cfg.bounce_cap(d);
    let mut stats = RankStepStats {
        energy_start: energy(xi, v),
        ..RankStepStats::default()
    };
    let mut family = SinusoidFamily {
        mu: map.offset().to_vec(),
        a: vec![0.0; map.len()],
        b: vec![0.0; map.len()],
    };
    let mut remaining = travel_time;
    loop {
        map.project(v, &mut family.a);
        map.project(xi, &mut family.b);
        let clock = Instant::now();
        let hit: Option<Crossing> = match search {
            CollisionSearch::Envelope => {
                let walk = walk_envelope(&family, partition, 0.0, remaining)?;
                stats.envelope_steps += walk.envelope_steps;
                stats.fallbacks += usize::from(walk.fell_back);
                walk.hit
            }
            CollisionSearch::BruteForce => brute_force_crossing(&family, partition, 0.0, remaining)?,
        };
        stats.search_ns += clock.elapsed().as_nanos() as u64;

        let step = hit.map_or(remaining, |h| h.time);
        let (s, c) = step.sin_cos();
        for (x, w) in xi.iter_mut().zip(v.iter_mut()) {
            let (x0, w0) = (*x, *w);
            *x = w0 * s + x0 * c;
            *w = w0 * c - x0 * s;
        }
        let Some(h) = hit else { break };
        map.reflect(v, h.lower, h.upper);
        remaining -= h.time;
        if stats.bounces == cap {
            return Err(Error::TooManyBounces {
                max_bounces: cap,
                elapsed: travel_time - remaining,
                travel_time,
            });
        }
        stats.bounces += 1;
    }
    stats.energy_end = energy(xi, v);
    Ok(stats)
}

/// One exact-HMC transition of the whitened state `xi`.
pub fn rank_hmc_step<M: LatentMap + ?Sized, R: Rng + ?Sized>(
    map: &M,
    partition: &LevelPartition,
    xi: &mut [f64],
    cfg: &HmcConfig,
    search: CollisionSearch,
    rng: &mut R,
) -> Result<RankStepStats> {
    let travel_time = cfg.draw_travel_time(rng);
    let mut v: Vec<f64> = (0..map.whitened_dim()).map(|_| rng.sample(StandardNormal)).collect();
    run_rank_trajectory(map, partition, xi, &mut v, travel_time, cfg, search)
}

/// `offset + P·xi`.
pub fn latent_from_whitened<M: LatentMap + ?Sized>(map: &M, xi: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; map.len()];
    map.project(xi, &mut z);
    for (zi, &m) in z.iter_mut().zip(map.offset()) {
        *zi += m;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_level_partition, generate_rank_constraints};
    use crate::gaussian::CovarianceMatrix;
    use crate::hmc::{ExactHmc, GaussianTarget, LinearConstraintSet};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sorted_start(part: &LevelPartition) -> Vec<f64> {
        let n = part.len();
        let mut z = vec![0.0; n];
        let mut rank = 0;
        for k in 0..part.num_levels() {
            for &i in part.rows(k) {
                z[i] = (rank as f64 + 0.5) / n as f64 * 4.0 - 2.0;
                rank += 1;
            }
        }
        z
    }

    #[test]
    fn envelope_and_brute_force_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let codes: Vec<i64> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let part = build_level_partition(&codes);
        let map = IsotropicMap {
            mean: (0..50).map(|i| 0.01 * i as f64).collect(),
            sd: 0.8,
        };
        let start: Vec<f64> = sorted_start(&part).iter().zip(&map.mean).map(|(z, m)| (z - m) / map.sd).collect();
        let cfg = HmcConfig::default();
        let (mut a, mut b) = (start.clone(), start);
        let mut bounces = 0;
        for k in 0..30 {
            let sa = rank_hmc_step(&map, &part, &mut a, &cfg, CollisionSearch::Envelope, &mut ChaCha8Rng::seed_from_u64(k)).unwrap();
            let sb = rank_hmc_step(&map, &part, &mut b, &cfg, CollisionSearch::BruteForce, &mut ChaCha8Rng::seed_from_u64(k)).unwrap();
            assert_eq!(a, b);
            assert_eq!(sa.bounces, sb.bounces);
            bounces += sa.bounces;
            assert!(part.is_satisfied(&latent_from_whitened(&map, &a)));
        }
        assert!(bounces > 30);
    }

    #[test]
    fn agrees_with_generic_dense_sampler() {
        // Same trajectory through the dense-F exact HMC path.
        let codes = [0, 1, 0, 2, 1, 2, 0, 1];
        let part = build_level_partition(&codes);
        let n = codes.len();
        let mean: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
        let sd = 1.3;
        let map = IsotropicMap { mean: mean.clone(), sd };
        let z0 = sorted_start(&part);
        let walls = LinearConstraintSet::from_rank_constraints(&generate_rank_constraints(&part), n);
        let target = GaussianTarget::new(
            DVector::from_vec(mean.clone()),
            CovarianceMatrix::new(DMatrix::identity(n, n) * (sd * sd)).unwrap(),
        )
        .unwrap();
        let dense = ExactHmc::new(target, walls).unwrap();
        let cfg = HmcConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut xi: Vec<f64> = z0.iter().zip(&mean).map(|(z, m)| (z - m) / sd).collect();
            let mut vel = v.clone();
            let st = run_rank_trajectory(&map, &part, &mut xi, &mut vel, 2.0, &cfg, CollisionSearch::Envelope).unwrap();
            let end = dense
                .run_trajectory(&DVector::from_vec(z0.clone()), &(DVector::from_vec(v) * sd), 2.0, &cfg)
                .unwrap();
            assert_eq!(st.bounces, end.bounces.len());
            let z = latent_from_whitened(&map, &xi);
            for i in 0..n {
                assert!((z[i] - end.position[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_level_is_free_motion() {
        let part = build_level_partition(&[1, 1, 1]);
        let map = IsotropicMap { mean: vec![0.0; 3], sd: 1.0 };
        let mut xi = vec![0.3, -0.2, 0.9];
        let mut v = vec![1.0, 0.5, -0.5];
        let st = run_rank_trajectory(&map, &part, &mut xi, &mut v, std::f64::consts::FRAC_PI_2, &HmcConfig::default(), CollisionSearch::Envelope).unwrap();
        assert_eq!(st.bounces, 0);
        for (x, e) in xi.iter().zip([1.0, 0.5, -0.5]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_conserved_across_bounces() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let codes: Vec<i64> = (0..200).map(|i| (i % 2) as i64).collect();
        let part = build_level_partition(&codes);
        let map = IsotropicMap { mean: vec![0.0; 200], sd: 1.0 };
        let mut xi = sorted_start(&part);
        for _ in 0..20 {
            let st = rank_hmc_step(&map, &part, &mut xi, &HmcConfig::default(), CollisionSearch::Envelope, &mut rng).unwrap();
            assert!(st.bounces > 0);
            assert!((st.energy_end - st.energy_start).abs() <= 1e-8 * st.energy_start);
        }
    }
}
