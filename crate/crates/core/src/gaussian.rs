//! Dense Gaussian linear algebra: Cholesky factors, Gaussian conditionals,
//! multivariate normal and inverse-Wishart draws, correlation normalisation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `L·Lᵀ = v`. Only the lower triangle of `v` is read.
pub fn cholesky(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    if v.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{} matrix", n, v.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = v[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = v[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Symmetric positive-definite matrix with its cached Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let scale = max_abs(&matrix).max(f64::MIN_POSITIVE);
        let asym = max_abs(&(&matrix - matrix.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let factor = cholesky(&matrix)?;
        Ok(Self { matrix, factor })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
            factor: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower Cholesky factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// Unit-diagonal symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Strict upper triangle in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(p * (p.saturating_sub(1)) / 2);
        for i in 0..p {
            for j in (i + 1)..p {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Rebuilds a correlation matrix from its strict upper triangle.
    pub fn from_upper_triangle(p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * (p.saturating_sub(1)) / 2 {
            return Err(Error::Dimension(format!(
                "{} upper-triangle entries for p = {p}",
                values.len()
            )));
        }
        let mut m = DMatrix::identity(p, p);
        let mut it = values.iter();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = *it.next().unwrap();
                if !(v.abs() <= 1.0) {
                    return Err(Error::InvalidArgument(format!("correlation entry {v} outside [-1, 1]")));
                }
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self(m))
    }
}

/// `C_ij = V_ij / √(V_ii V_jj)`, with the diagonal set to exactly one.
pub fn cov_to_corr(v: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let p = v.nrows();
    let mut sd = Vec::with_capacity(p);
    for i in 0..p {
        let d = v[(i, i)];
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!("diagonal entry {i} is {d}, not positive")));
        }
        sd.push(d.sqrt());
    }
    let mut c = DMatrix::from_fn(p, p, |i, j| {
        let r = v[(i, j)] / (sd[i] * sd[j]);
        r.clamp(-1.0, 1.0)
    });
    // average the two triangles so the result is exactly symmetric
    for i in 0..p {
        c[(i, i)] = 1.0;
        for j in (i + 1)..p {
            let r = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = r;
            c[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix(c))
}

/// Inverse-Wishart parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WishartPrior {
    pub df: f64,
    pub scale: DMatrix<f64>,
}

impl WishartPrior {
    pub fn new(df: f64, scale: DMatrix<f64>) -> Result<Self> {
        let p = scale.nrows();
        if scale.ncols() != p {
            return Err(Error::Dimension("inverse-Wishart scale must be square".into()));
        }
        if !(df > p as f64 - 1.0) {
            return Err(Error::InvalidArgument(format!("df = {df} must exceed p - 1 = {}", p as f64 - 1.0)));
        }
        cholesky(&scale)?;
        Ok(Self { df, scale })
    }

    /// `df = p + 2`, `V0 = df·I`.
    pub fn default_for(p: usize) -> Self {
        let df = p as f64 + 2.0;
        Self {
            df,
            scale: DMatrix::identity(p, p) * df,
        }
    }

    /// Conjugate update given `n` latent rows with cross-product `ZᵀZ`.
    pub fn posterior(&self, n: usize, cross: &DMatrix<f64>) -> Self {
        Self {
            df: self.df + n as f64,
            scale: &self.scale + cross,
        }
    }
}

/// Draws `V ~ IW(df, Ψ)` by a Bartlett factorisation of the Wishart for `Ψ⁻¹`
/// and triangular solves; `Ψ` itself is never inverted.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(prior: &WishartPrior, rng: &mut R) -> Result<CovarianceMatrix> {
    let p = prior.scale.nrows();
    let u = cholesky(&prior.scale)?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(prior.df - i as f64)
            .map_err(|e| Error::InvalidArgument(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
    }
    for i in 0..p {
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // W = U⁻ᵀ A Aᵀ U⁻¹ ~ Wishart(df, Ψ⁻¹), so V = W⁻¹ = B Bᵀ with B = U A⁻ᵀ.
    let bt = a
        .solve_lower_triangular(&u.transpose())
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
    let b = bt.transpose();
    let v = &b * &bt;
    let v = (&v + v.transpose()) * 0.5;
    CovarianceMatrix::new(v)
}

/// Regression weights and residual variance of one coordinate given the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalWeights {
    pub column: usize,
    /// `V_{∖j,∖j}⁻¹ V_{∖j,j}`, indexed over the other columns in order.
    pub beta: Vec<f64>,
    pub variance: f64,
}

/// Conditional of column `j` of `Z` given the remaining columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

pub fn conditional_weights(v: &DMatrix<f64>, j: usize) -> Result<ConditionalWeights> {
    let p = v.nrows();
    if j >= p {
        return Err(Error::Dimension(format!("column {j} out of range for p = {p}")));
    }
    let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
    if others.is_empty() {
        return Ok(ConditionalWeights {
            column: j,
            beta: Vec::new(),
            variance: v[(j, j)],
        });
    }
    let sub = v.select_rows(&others).select_columns(&others);
    let cross = DVector::from_iterator(others.len(), others.iter().map(|&i| v[(i, j)]));
    let l = cholesky(&sub)?;
    let y = l
        .solve_lower_triangular(&cross)
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
    let beta = l
        .tr_solve_lower_triangular(&y)
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
    let variance = v[(j, j)] - cross.dot(&beta);
    if !(variance > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: j, value: variance });
    }
    Ok(ConditionalWeights {
        column: j,
        beta: beta.iter().copied().collect(),
        variance,
    })
}

impl ConditionalWeights {
    /// `μ_j = Z_{:,∖j} β`.
    pub fn mean(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let mut mean = vec![0.0; z.nrows()];
        let others = (0..z.ncols()).filter(|&i| i != self.column);
        for (col, &w) in others.zip(&self.beta) {
            for (m, &x) in mean.iter_mut().zip(z.column(col).iter()) {
                *m += w * x;
            }
        }
        mean
    }
}

pub fn conditional_gaussian(v: &DMatrix<f64>, z: &DMatrix<f64>, j: usize) -> Result<ConditionalGaussian> {
    if z.ncols() != v.nrows() {
        return Err(Error::Dimension(format!("Z has {} columns, V is {}x{}", z.ncols(), v.nrows(), v.ncols())));
    }
    let w = conditional_weights(v, j)?;
    Ok(ConditionalGaussian {
        mean: w.mean(z),
        variance: w.variance,
    })
}

/// `mean + L·w` with `w` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let w = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + factor * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(p, p) * 0.5
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        let l = cholesky(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 10.0])).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_spd(20, &mut rng);
        let l = cholesky(&v).unwrap();
        let err = max_abs(&(&l * l.transpose() - &v)) / max_abs(&v);
        assert!(err < 1e-10, "{err}");
        for i in 0..20 {
            for j in (i + 1)..20 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_reports_pivot() {
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(cholesky(&v), Err(Error::NotPositiveDefinite { pivot: 2, .. })));
    }

    #[test]
    fn conditional_identity_and_bivariate() {
        let z = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64);
        for j in 0..3 {
            let c = conditional_gaussian(&DMatrix::identity(3, 3), &z, j).unwrap();
            assert_eq!(c.variance, 1.0);
            assert!(c.mean.iter().all(|&m| m == 0.0));
        }
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, -2.0, 0.0, 4.0]);
        let c = conditional_gaussian(&v, &z, 0).unwrap();
        assert!((c.variance - 0.75).abs() < 1e-15);
        for (m, x) in c.mean.iter().zip([1.0, -2.0, 4.0]) {
            assert!((m - 0.5 * x).abs() < 1e-15);
        }
        let v1 = DMatrix::from_element(1, 1, 2.5);
        let c = conditional_gaussian(&v1, &DMatrix::from_element(4, 1, 1.0), 0).unwrap();
        assert_eq!(c.variance, 2.5);
        assert_eq!(c.mean, vec![0.0; 4]);
    }

    #[test]
    fn conditional_matches_precision_oracle() {
        // From the joint precision Q: var = 1 / Q_jj, weights = -Q_{j,∖j} / Q_jj.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in 2..=10 {
            let v = random_spd(p, &mut rng);
            let q = v.clone().try_inverse().unwrap();
            for j in 0..p {
                let w = conditional_weights(&v, j).unwrap();
                assert!((w.variance - 1.0 / q[(j, j)]).abs() < 1e-9 * w.variance.max(1.0));
                let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
                for (k, &i) in others.iter().enumerate() {
                    let expected = -q[(j, i)] / q[(j, j)];
                    assert!((w.beta[k] - expected).abs() < 1e-9 * (1.0 + expected.abs()));
                }
            }
        }
    }

    #[test]
    fn mvn_zero_factor_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        assert_eq!(sample_mvn(&mean, &DMatrix::zeros(3, 3), &mut rng), mean);
    }

    #[test]
    fn mvn_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let zero = DVector::zeros(3);
        let eye = DMatrix::identity(3, 3);
        let mut sum = DVector::zeros(3);
        for _ in 0..n {
            sum += sample_mvn(&zero, &eye, &mut rng);
        }
        let mean = sum / n as f64;
        assert!(mean.iter().all(|m| m.abs() < 3.0 / (n as f64).sqrt()), "{mean}");

        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = cholesky(&cov).unwrap();
        let zero = DVector::zeros(2);
        let mut acc = DMatrix::zeros(2, 2);
        let mut s = DVector::zeros(2);
        for _ in 0..n {
            let x = sample_mvn(&zero, &l, &mut rng);
            acc += &x * x.transpose();
            s += x;
        }
        let m = s / n as f64;
        let emp = acc / n as f64 - &m * m.transpose();
        assert!(max_abs(&(emp - cov)) < 0.05);
    }

    fn iw_draws(df: f64, scale: f64, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = WishartPrior::new(df, DMatrix::identity(3, 3) * scale).unwrap();
        (0..n)
            .map(|_| sample_inverse_wishart(&prior, &mut rng).unwrap().matrix().clone())
            .collect()
    }

    #[test]
    fn inverse_wishart_mean() {
        // E[V] = V0 / (df - p - 1) = 5 I; df = 9 keeps the variance finite.
        let draws = iw_draws(9.0, 25.0, 100_000, 5);
        let mean = draws.iter().fold(DMatrix::zeros(3, 3), |a, d| a + d) / draws.len() as f64;
        assert!(max_abs(&(mean - DMatrix::identity(3, 3) * 5.0)) < 0.25);
    }

    #[test]
    fn inverse_wishart_heavy_tailed_marginals() {
        // df = p + 2 = 5, V0 = 5 I: E[V] = 5 I but Var[V_ii] is infinite, so the
        // sample mean is checked loosely and the diagonal marginal
        // V_ii ~ InvGamma(1.5, 2.5) is checked through its median.
        use statrs::distribution::{ContinuousCDF, Gamma};
        let draws = iw_draws(5.0, 5.0, 100_000, 5);
        let expected_median = 1.0 / Gamma::new(1.5, 2.5).unwrap().inverse_cdf(0.5);
        for i in 0..3 {
            let mut diag: Vec<f64> = draws.iter().map(|d| d[(i, i)]).collect();
            diag.sort_by(f64::total_cmp);
            let median = diag[diag.len() / 2];
            assert!((median - expected_median).abs() / expected_median < 0.02, "{median} vs {expected_median}");
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            assert!((mean - 5.0).abs() < 1.0, "{mean}");
        }
    }

    #[test]
    fn inverse_wishart_univariate_is_inverse_gamma() {
        // IW(3, [2]) in one dimension is inverse-gamma(3/2, 1): E[1/V] = 1.5,
        // E[log V] = -digamma(1.5).
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = WishartPrior::new(3.0, DMatrix::from_element(1, 1, 2.0)).unwrap();
        let n = 100_000;
        let (mut inv, mut log) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_inverse_wishart(&prior, &mut rng).unwrap().matrix()[(0, 0)];
            inv += 1.0 / v;
            log += v.ln();
        }
        let digamma_1_5 = 0.036_489_973_978_576_52;
        assert!((inv / n as f64 - 1.5).abs() < 0.02);
        assert!((log / n as f64 + digamma_1_5).abs() < 0.02);
    }

    #[test]
    fn inverse_wishart_rejects_small_df() {
        assert!(WishartPrior::new(1.5, DMatrix::identity(3, 3)).is_err());
        let p = WishartPrior::default_for(4);
        assert_eq!(p.df, 6.0);
        assert_eq!(p.scale, DMatrix::identity(4, 4) * 6.0);
    }

    #[test]
    fn cov_to_corr_examples() {
        let c = cov_to_corr(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 9.0])).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        let d = cov_to_corr(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 7.0]))).unwrap();
        assert_eq!(d.matrix(), &DMatrix::identity(2, 2));
        assert!(cov_to_corr(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn upper_triangle_roundtrip() {
        let c = CorrelationMatrix::from_upper_triangle(3, &[0.6, 0.3, 0.0]).unwrap();
        assert_eq!(c.get(2, 0), 0.3);
        assert_eq!(c.upper_triangle(), vec![0.6, 0.3, 0.0]);
    }

    proptest! {
        #[test]
        fn cov_to_corr_idempotent_and_scale_invariant(seed in 0u64..1000, scales in prop::collection::vec(0.1f64..10.0, 5)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_spd(5, &mut rng);
            let c = cov_to_corr(&v).unwrap();
            let cc = cov_to_corr(c.matrix()).unwrap();
            prop_assert!(max_abs(&(cc.matrix() - c.matrix())) < 1e-14);
            let d = DMatrix::from_diagonal(&DVector::from_vec(scales));
            let scaled = cov_to_corr(&(&d * &v * &d)).unwrap();
            prop_assert!(max_abs(&(scaled.matrix() - c.matrix())) < 1e-12);
            for i in 0..5 {
                prop_assert_eq!(c.get(i, i), 1.0);
                for j in 0..5 {
                    prop_assert!(c.get(i, j).abs() <= 1.0);
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                    prop_assert_eq!(c.get(i, j).signum(), v[(i, j)].signum());
                }
            }
        }

        #[test]
        fn inverse_wishart_draws_are_positive_definite(seed in 0u64..200, p in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = WishartPrior::default_for(p);
            let v = sample_inverse_wishart(&prior, &mut rng).unwrap();
            prop_assert!(cholesky(v.matrix()).is_ok());
        }
    }
}
