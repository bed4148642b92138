//! Univariate truncated normal draws by Robert's (1995) mixed rejection
//! scheme: normal, exponential or uniform proposals depending on where the
//! interval sits.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Draw from `N(0, 1)` restricted to `(lo, hi)`.
pub fn sample_standard<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(!(lo > hi), "empty interval ({lo}, {hi})");
    if !(lo < hi) {
        return lo;
    }
    match (lo.is_finite(), hi.is_finite()) {
        (false, false) => rng.sample(StandardNormal),
        (true, false) => lower_tail(lo, rng),
        (false, true) => -lower_tail(-hi, rng),
        (true, true) => {
            if hi <= 0.0 {
                -two_sided(-hi, -lo, rng)
            } else {
                two_sided(lo, hi, rng)
            }
        }
    }
}

/// Draw from `N(mean, sd²)` restricted to `(lo, hi)`.
pub fn sample<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let z = sample_standard((lo - mean) / sd, (hi - mean) / sd, rng);
    (mean + sd * z).clamp(lo, hi)
}

fn optimal_rate(lo: f64) -> f64 {
    0.5 * (lo + (lo * lo + 4.0).sqrt())
}

/// `z ≥ lo`.
fn lower_tail<R: Rng + ?Sized>(lo: f64, rng: &mut R) -> f64 {
    if lo < 0.45 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= lo {
                return z;
            }
        }
    }
    exponential_tail(lo, f64::INFINITY, rng)
}

fn exponential_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let rate = optimal_rate(lo);
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = lo + e / rate;
        if z > hi {
            continue;
        }
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

/// `lo < z < hi` with `hi > 0`.
fn two_sided<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo <= 0.0 {
        if hi - lo > 2.5 {
            loop {
                let z: f64 = rng.sample(StandardNormal);
                if z > lo && z < hi {
                    return z;
                }
            }
        }
        return uniform(lo, hi, 0.0, rng);
    }
    // lo > 0: uniform proposal for short intervals, exponential for long ones.
    let cutoff = lo + 2.0 * std::f64::consts::E.sqrt() / (lo + (lo * lo + 4.0).sqrt())
        * ((lo * lo - lo * (lo * lo + 4.0).sqrt()) / 4.0).exp();
    if hi > cutoff {
        exponential_tail(lo, hi, rng)
    } else {
        uniform(lo, hi, lo * lo, rng)
    }
}

/// Uniform proposal on `(lo, hi)`, accepted with `exp((shift − z²)/2)`.
fn uniform<R: Rng + ?Sized>(lo: f64, hi: f64, shift: f64, rng: &mut R) -> f64 {
    loop {
        let z = rng.random_range(lo..hi);
        let u: f64 = rng.random();
        if u <= (0.5 * (shift - z * z)).exp() {
            return z;
        }
    }
}
