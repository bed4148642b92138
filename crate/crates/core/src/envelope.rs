//! Earliest inter-level crossing of rank-constrained sinusoids.
//!
//! Each latent coordinate moves as `x_i(t) = μ_i + a_i·sin t + b_i·cos t`. For
//! every pair of adjacent levels the search walks the upper envelope of the
//! lower level: it follows the current maximum of that level, hopping to
//! whichever curve overtakes it next, until a curve of the upper level comes
//! down to meet it. The first violation of any order constraint must involve
//! the lower level's maximum, so only that curve is tested against the upper
//! level, giving `O(n·h)` work per search with `h` the number of hops.

use crate::data::LevelPartition;
use crate::error::{Error, Result};
use crate::sinusoid::{first_root, first_upcrossing, GRAZING_EPSILON};

/// Coefficients of `x(t) = μ + a·sin t + b·cos t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
}

impl Sinusoid {
    pub fn at(&self, t: f64) -> f64 {
        let (s, c) = t.sin_cos();
        self.mu + self.a * s + self.b * c
    }
}

/// Earliest `t > t_min` where the two curves meet; `None` if they never do
/// (including when they coincide everywhere).
pub fn sinusoid_crossing(x: &Sinusoid, y: &Sinusoid, t_min: f64) -> Option<f64> {
    first_root(x.a - y.a, x.b - y.b, y.mu - x.mu, t_min, GRAZING_EPSILON)
}

/// Coefficients of all coordinates of one latent column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SinusoidFamily {
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SinusoidFamily {
    pub fn new(mu: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if mu.len() != a.len() || a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "sinusoid family lengths differ: {}, {}, {}",
                mu.len(),
                a.len(),
                b.len()
            )));
        }
        Ok(Self { mu, a, b })
    }

    pub fn with_len(n: usize) -> Self {
        Self {
            mu: vec![0.0; n],
            a: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn curve(&self, i: usize) -> Sinusoid {
        Sinusoid {
            mu: self.mu[i],
            a: self.a[i],
            b: self.b[i],
        }
    }

    #[inline]
    fn value(&self, i: usize, s: f64, c: f64) -> f64 {
        self.mu[i] + self.a[i] * s + self.b[i] * c
    }

    #[inline]
    fn slope(&self, i: usize, s: f64, c: f64) -> f64 {
        self.a[i] * c - self.b[i] * s
    }

    /// Time at which `lower` first rises to meet `upper` after `t_min`.
    #[inline]
    fn meet(&self, lower: usize, upper: usize, t_min: f64) -> Option<f64> {
        first_upcrossing(
            self.a[lower] - self.a[upper],
            self.b[lower] - self.b[upper],
            self.mu[upper] - self.mu[lower],
            t_min,
            GRAZING_EPSILON,
        )
    }

    fn same_curve(&self, i: usize, j: usize) -> bool {
        self.mu[i] == self.mu[j] && self.a[i] == self.a[j] && self.b[i] == self.b[j]
    }
}

/// A violated order constraint: row `lower` meets row `upper` at `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub lower: usize,
    pub upper: usize,
}

impl Crossing {
    /// Earlier time wins; equal times go to the smaller `(lower, upper)`.
    fn precedes(&self, other: &Crossing) -> bool {
        self.time < other.time || (self.time == other.time && (self.lower, self.upper) < (other.lower, other.upper))
    }
}

fn keep_earliest(best: &mut Option<Crossing>, cand: Crossing) {
    if best.is_none_or(|b| cand.precedes(&b)) {
        *best = Some(cand);
    }
}

/// Earliest crossing with the work it took to find it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossingResult {
    pub time: f64,
    pub lower: usize,
    pub upper: usize,
    /// Hops along lower-level envelopes, summed over adjacent level pairs.
    pub envelope_steps: usize,
    /// Set when some walk exceeded its hop cap and brute force was used.
    pub fell_back: bool,
}

/// Outcome of one search, hit or not.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnvelopeWalk {
    pub hit: Option<Crossing>,
    pub envelope_steps: usize,
    pub fell_back: bool,
}

impl EnvelopeWalk {
    pub fn into_result(self) -> Option<CrossingResult> {
        self.hit.map(|h| CrossingResult {
            time: h.time,
            lower: h.lower,
            upper: h.upper,
            envelope_steps: self.envelope_steps,
            fell_back: self.fell_back,
        })
    }
}

/// Checks that every level lies strictly below the next at `t`, allowing a
/// rounding-sized overlap for a pair that has just bounced.
pub fn validate_family(family: &SinusoidFamily, partition: &LevelPartition, t: f64) -> Result<()> {
    if family.len() != partition.len() {
        return Err(Error::Dimension(format!(
            "{} sinusoids for a partition of {} rows",
            family.len(),
            partition.len()
        )));
    }
    let (s, c) = t.sin_cos();
    for (k, w) in partition.levels().windows(2).enumerate() {
        let lo = top_of(family, &w[0].rows, s, c);
        let (hi, hi_val) = w[1]
            .rows
            .iter()
            .map(|&i| (i, family.value(i, s, c)))
            .fold((w[1].rows[0], f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        let lo_val = family.value(lo, s, c);
        if family.same_curve(lo, hi) {
            return Err(Error::CoincidentCurves { lower: lo, upper: hi });
        }
        let tol = 1e-9 * (1.0 + lo_val.abs().max(hi_val.abs()));
        if !(lo_val <= hi_val + tol) {
            return Err(Error::LevelOverlap { level: k, lower: lo, upper: hi });
        }
    }
    Ok(())
}

/// Maximum of `rows` at the given phase; ties go to the curve rising fastest.
fn top_of(family: &SinusoidFamily, rows: &[usize], s: f64, c: f64) -> usize {
    let mut best = rows[0];
    let mut best_val = family.value(best, s, c);
    let mut best_slope = family.slope(best, s, c);
    for &i in &rows[1..] {
        let v = family.value(i, s, c);
        if v > best_val || (v == best_val && family.slope(i, s, c) > best_slope) {
            best = i;
            best_val = v;
            best_slope = family.slope(i, s, c);
        }
    }
    best
}

/// Walks the upper envelope of `lower` from `t_min` until an `upper` curve
/// meets it or `t_max` passes. Returns the crossing and the number of hops.
fn walk_pair(
    family: &SinusoidFamily,
    lower: &[usize],
    upper: &[usize],
    t_min: f64,
    t_max: f64,
) -> (Option<Crossing>, usize, bool) {
    walk_pair_observed(family, lower, upper, t_min, t_max, |_, _| {})
}

/// `walk_pair` reporting `(time, curve)` for the start and every hop.
fn walk_pair_observed<F: FnMut(f64, usize)>(
    family: &SinusoidFamily,
    lower: &[usize],
    upper: &[usize],
    t_min: f64,
    t_max: f64,
    mut observe: F,
) -> (Option<Crossing>, usize, bool) {
    let (s0, c0) = t_min.sin_cos();
    let mut cur = top_of(family, lower, s0, c0);
    observe(t_min, cur);
    let mut t = t_min;
    let mut steps = 0;
    loop {
        let (s, c) = t.sin_cos();
        let x_cur = family.value(cur, s, c);
        let (a_cur, b_cur) = (family.a[cur], family.b[cur]);
        let mut horizon = t_max;
        let mut hit: Option<Crossing> = None;

        for &r in upper {
            let reach = (family.a[r] - a_cur).abs() + (family.b[r] - b_cur).abs();
            if reach == 0.0 {
                continue;
            }
            // |d/dt (x_r − x_cur)| ≤ reach, so the gap cannot close before t + gap/reach.
            let gap = family.value(r, s, c) - x_cur;
            if gap > (horizon - t) * reach {
                continue;
            }
            if let Some(tc) = family.meet(cur, r, t) {
                let cand = Crossing { time: tc, lower: cur, upper: r };
                if tc <= horizon && hit.is_none_or(|h| cand.precedes(&h)) {
                    hit = Some(cand);
                    horizon = tc;
                }
            }
        }

        let mut next: Option<(f64, usize)> = None;
        for &i in lower {
            if i == cur {
                continue;
            }
            let reach = (family.a[i] - a_cur).abs() + (family.b[i] - b_cur).abs();
            if reach == 0.0 {
                continue;
            }
            let gap = x_cur - family.value(i, s, c);
            if gap > (horizon - t) * reach {
                continue;
            }
            if let Some(tc) = family.meet(i, cur, t) {
                if tc < horizon {
                    next = Some((tc, i));
                    horizon = tc;
                }
            }
        }

        match next {
            Some((tc, i)) => {
                t = tc;
                cur = i;
                steps += 1;
                observe(t, cur);
                if steps > lower.len() {
                    return (brute_force_pair(family, lower, upper, t_min, t_max), steps, true);
                }
            }
            None => return (hit, steps, false),
        }
    }
}

fn brute_force_pair(
    family: &SinusoidFamily,
    lower: &[usize],
    upper: &[usize],
    t_min: f64,
    t_max: f64,
) -> Option<Crossing> {
    let mut best = None;
    for &lo in lower {
        for &hi in upper {
            if let Some(t) = family.meet(lo, hi, t_min) {
                if t <= t_max {
                    keep_earliest(&mut best, Crossing { time: t, lower: lo, upper: hi });
                }
            }
        }
    }
    best
}

/// Envelope search over `(t_min, t_max]` for every adjacent level pair.
pub fn walk_envelope(family: &SinusoidFamily, partition: &LevelPartition, t_min: f64, t_max: f64) -> Result<EnvelopeWalk> {
    validate_family(family, partition, t_min)?;
    let mut out = EnvelopeWalk::default();
    for w in partition.levels().windows(2) {
        let (hit, steps, fell_back) = walk_pair(family, &w[0].rows, &w[1].rows, t_min, t_max);
        out.envelope_steps += steps;
        out.fell_back |= fell_back;
        if let Some(h) = hit {
            keep_earliest(&mut out.hit, h);
        }
    }
    Ok(out)
}

/// Earliest inter-level crossing within `(0, t_budget]`.
pub fn earliest_crossing(family: &SinusoidFamily, partition: &LevelPartition, t_budget: f64) -> Result<Option<CrossingResult>> {
    Ok(walk_envelope(family, partition, 0.0, t_budget)?.into_result())
}

/// All-pairs reference search over `(t_min, t_max]`; `O(Σ|l_k||l_{k+1}|)`.
pub fn brute_force_crossing(
    family: &SinusoidFamily,
    partition: &LevelPartition,
    t_min: f64,
    t_max: f64,
) -> Result<Option<Crossing>> {
    validate_family(family, partition, t_min)?;
    let mut best = None;
    for w in partition.levels().windows(2) {
        if let Some(h) = brute_force_pair(family, &w[0].rows, &w[1].rows, t_min, t_max) {
            keep_earliest(&mut best, h);
        }
    }
    Ok(best)
}

/// Distribution of envelope hops over a set of searches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnvelopeStats {
    pub count: usize,
    pub mean_steps: f64,
    pub max_steps: usize,
    pub fallbacks: usize,
}

pub fn envelope_stats(results: &[CrossingResult]) -> EnvelopeStats {
    if results.is_empty() {
        return EnvelopeStats::default();
    }
    let total: usize = results.iter().map(|r| r.envelope_steps).sum();
    EnvelopeStats {
        count: results.len(),
        mean_steps: total as f64 / results.len() as f64,
        max_steps: results.iter().map(|r| r.envelope_steps).max().unwrap_or(0),
        fallbacks: results.iter().filter(|r| r.fell_back).count(),
    }
}
