//! Effective sample size with Geyer's initial positive sequence.

/// ESS of a scalar chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ess {
    pub ess: f64,
    /// The series has zero variance; `ess` is then its length.
    pub degenerate: bool,
}

/// Sums autocorrelation pairs `ρ_{2m} + ρ_{2m+1}` while they stay positive,
/// giving `ESS = n / (−1 + 2·Σ)`, capped at `n`.
pub fn compute_ess(series: &[f64]) -> Option<Ess> {
    let n = series.len();
    if n < 10 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let var = autocov(0);
    if !(var > 0.0) {
        return Some(Ess { ess: n as f64, degenerate: true });
    }
    let mut sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Some(Ess { ess: (n as f64 / tau).min(n as f64), degenerate: false })
}
