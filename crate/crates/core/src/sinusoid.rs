//! Closed-form roots of `h(t) = u·sin t + v·cos t − c`.
//!
//! Writing `u·sin t + v·cos t = R·cos(t − φ)` with `R = √(u² + v²)` and
//! `φ = atan2(u, v)`, the roots are `t = φ ± arccos(c / R)` (mod 2π) whenever
//! `R ≥ |c|`. The root `φ − arccos(c/R)` is where `h` crosses zero upward.

use std::f64::consts::TAU;

/// Rounding slack for crossings found at the start of a search.
pub const GRAZING_EPSILON: f64 = 1e-10;

/// Smallest `t ≡ t0 (mod 2π)` with `t > after`.
#[inline]
fn next_after(t0: f64, after: f64) -> f64 {
    let k = ((after - t0) / TAU).floor() + 1.0;
    let t = t0 + k * TAU;
    if t > after {
        t
    } else {
        t + TAU
    }
}

/// Earliest `t ≥ t_min` at which `h` crosses zero from below, i.e. the time a
/// trajectory currently satisfying `f·x < g` reaches the wall. An upcrossing
/// up to `eps` before `t_min` is reported as `t_min` if `h` is still rising
/// there; a pair that has just been reflected is falling and is skipped.
/// Tangential contact (`R = |c|`) is not a crossing.
#[inline]
pub fn first_upcrossing(u: f64, v: f64, c: f64, t_min: f64, eps: f64) -> Option<f64> {
    let r = u.hypot(v);
    if !(r > c.abs()) {
        return None;
    }
    let phi = u.atan2(v);
    let alpha = (c / r).acos();
    let t = next_after(phi - alpha, t_min - eps);
    if t > t_min {
        return Some(t);
    }
    let (s, co) = t_min.sin_cos();
    if u * co - v * s > 0.0 {
        Some(t_min)
    } else {
        Some(t + TAU)
    }
}

/// Earliest root of `h` (either direction) strictly after `t_min + eps`.
pub fn first_root(u: f64, v: f64, c: f64, t_min: f64, eps: f64) -> Option<f64> {
    let r = u.hypot(v);
    if r == 0.0 || r < c.abs() {
        return None;
    }
    let phi = u.atan2(v);
    let alpha = (c / r).clamp(-1.0, 1.0).acos();
    let after = t_min + eps;
    Some(next_after(phi - alpha, after).min(next_after(phi + alpha, after)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn h(u: f64, v: f64, c: f64, t: f64) -> f64 {
        u * t.sin() + v * t.cos() - c
    }

    #[test]
    fn known_roots() {
        // -cos t <= 0 first fails at π/2
        assert!((first_upcrossing(0.0, -1.0, 0.0, 0.0, 0.0).unwrap() - FRAC_PI_2).abs() < 1e-15);
        // sin t <= 0.5 first fails at π/6
        assert!((first_upcrossing(1.0, 0.0, 0.5, 0.0, 0.0).unwrap() - FRAC_PI_6).abs() < 1e-15);
        assert_eq!(first_upcrossing(0.0, 0.1, 0.5, 0.0, 0.0), None);
        assert_eq!(first_upcrossing(0.0, 0.0, 0.0, 0.0, 0.0), None);
        // sin t - cos t = 0 at π/4
        assert!((first_root(1.0, -1.0, 0.0, 0.0, 0.0).unwrap() - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn respects_t_min() {
        let t = first_upcrossing(1.0, 0.0, 0.5, 1.0, 0.0).unwrap();
        assert!((t - (FRAC_PI_6 + TAU)).abs() < 1e-12);
    }

    #[test]
    fn recent_crossing_counts_only_while_rising() {
        // sin t <= 0 crossed upward at 0; from just after, it is still rising.
        assert_eq!(first_upcrossing(1.0, 0.0, 0.0, 1e-12, 1e-10), Some(1e-12));
        // Reflected: -sin t is falling at the same point.
        let t = first_upcrossing(-1.0, 0.0, 0.0, 1e-12, 1e-10).unwrap();
        assert!((t - PI).abs() < 1e-12);
        // Beyond the slack the old crossing is ignored.
        let t = first_upcrossing(1.0, 0.0, 0.0, 1e-6, 1e-10).unwrap();
        assert!((t - TAU).abs() < 1e-12);
    }

    /// Dense grid bracketing followed by bisection.
    fn grid_first_root(u: f64, v: f64, c: f64, t_min: f64, upward_only: bool) -> Option<f64> {
        let steps = 200_000;
        let dt = TAU / steps as f64;
        let mut t0 = t_min + 1e-9;
        let mut h0 = h(u, v, c, t0);
        for _ in 0..steps {
            let t1 = t0 + dt;
            let h1 = h(u, v, c, t1);
            let crosses = if upward_only { h0 < 0.0 && h1 >= 0.0 } else { h0.signum() != h1.signum() };
            if crosses {
                let (mut lo, mut hi) = (t0, t1);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if h(u, v, c, mid).signum() == h(u, v, c, lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            t0 = t1;
            h0 = h1;
        }
        None
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn upcrossing_matches_grid_oracle(u in -3.0f64..3.0, v in -3.0f64..3.0, c in -3.0f64..3.0, t_min in 0.0f64..3.0) {
            let r = u.hypot(v);
            prop_assume!((r - c.abs()).abs() > 1e-3);
            let closed = first_upcrossing(u, v, c, t_min, 0.0);
            let grid = grid_first_root(u, v, c, t_min, true);
            match (closed, grid) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b),
                (None, None) => {}
                (a, b) => prop_assert!(false, "closed {:?} grid {:?}", a, b),
            }
            if let Some(t) = closed {
                prop_assert!(h(u, v, c, t).abs() < 1e-12 * (1.0 + r));
            }
        }

        #[test]
        fn any_root_matches_grid_oracle(u in -3.0f64..3.0, v in -3.0f64..3.0, c in -3.0f64..3.0) {
            let r = u.hypot(v);
            prop_assume!((r - c.abs()).abs() > 1e-3);
            let closed = first_root(u, v, c, 0.0, 0.0);
            let grid = grid_first_root(u, v, c, 0.0, false);
            match (closed, grid) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b),
                (None, None) => {}
                (a, b) => prop_assert!(false, "closed {:?} grid {:?}", a, b),
            }
        }
    }
}
