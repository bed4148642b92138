//! Exact Hamiltonian Monte Carlo for a Gaussian restricted to `{x : F·x ≤ g}`.
//!
//! The mass matrix is the target precision, so every coordinate follows a
//! unit-frequency sinusoid `x(t) = μ + a·sin t + b·cos t`. The sampler runs in
//! the whitened frame `x̃ = L⁻¹(x − μ)` (`Σ = L·Lᵀ`), where the target is standard
//! normal, walls become `(Lᵀf)·x̃ ≤ g − f·μ`, and reflection about a wall is an
//! ordinary Euclidean (Householder) reflection that conserves kinetic energy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::data::RankConstraintSet;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::sinusoid::{first_upcrossing, GRAZING_EPSILON};

/// Gaussian `N(μ, Σ)` with its whitening factor.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    cov: CovarianceMatrix,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, cov: CovarianceMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension(format!(
                "mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: CovarianceMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }

    fn factor(&self) -> &DMatrix<f64> {
        self.cov.factor()
    }

    /// `L⁻¹(x − μ)`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.whiten_direction(&(x - &self.mean))
    }

    /// `L⁻¹·d`, for velocities and other displacements.
    pub fn whiten_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        self.factor()
            .solve_lower_triangular(d)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `μ + L·x̃`.
    pub fn unwhiten(&self, xt: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.factor() * xt
    }

    /// `½(x − μ)ᵀM(x − μ) + ½ sᵀM⁻¹s` with `M = Σ⁻¹` and `ẋ = M⁻¹s`.
    pub fn hamiltonian(&self, x: &DVector<f64>, velocity: &DVector<f64>) -> f64 {
        0.5 * (self.whiten(x).norm_squared() + self.whiten_direction(velocity).norm_squared())
    }
}

/// Walls `f_j·x ≤ g_j`.
#[derive(Clone, Debug, Default)]
pub struct LinearConstraintSet {
    normals: Vec<DVector<f64>>,
    offsets: Vec<f64>,
}

impl LinearConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, normal: DVector<f64>, offset: f64) -> Result<()> {
        if normal.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument(format!("wall {} has a zero normal", self.normals.len())));
        }
        if let Some(first) = self.normals.first() {
            if first.len() != normal.len() {
                return Err(Error::Dimension(format!(
                    "wall normal has {} entries, expected {}",
                    normal.len(),
                    first.len()
                )));
            }
        }
        self.normals.push(normal);
        self.offsets.push(offset);
        Ok(())
    }

    pub fn from_rows(rows: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut set = Self::new();
        for (f, g) in rows {
            set.push(DVector::from_column_slice(f), *g)?;
        }
        Ok(set)
    }

    /// Dense view of rank-order constraints on `n` coordinates.
    pub fn from_rank_constraints(rank: &RankConstraintSet, n: usize) -> Self {
        let (f, g) = rank.dense(n);
        Self {
            normals: f.into_iter().map(DVector::from_vec).collect(),
            offsets: g,
        }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normal(&self, j: usize) -> &DVector<f64> {
        &self.normals[j]
    }

    pub fn offset(&self, j: usize) -> f64 {
        self.offsets[j]
    }

    /// `g_j − f_j·x` for every wall.
    pub fn slacks(&self, x: &DVector<f64>) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(f, g)| g - f.dot(x))
            .collect()
    }

    /// First wall with non-positive slack.
    pub fn first_violation(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        self.slacks(x)
            .into_iter()
            .enumerate()
            .find(|&(_, s)| !(s > 0.0))
    }
}

/// `x(t) = μ + a·sin t + b·cos t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryCoefficients {
    pub mu: DVector<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl TrajectoryCoefficients {
    pub fn position(&self, t: f64) -> DVector<f64> {
        &self.mu + &self.a * t.sin() + &self.b * t.cos()
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        &self.a * t.cos() - &self.b * t.sin()
    }
}

/// Coefficients for a trajectory leaving `x0` with momentum `s`
/// (`a = M⁻¹s = Σ·s`, `b = x0 − μ`).
pub fn init_trajectory(
    target: &GaussianTarget,
    constraints: &LinearConstraintSet,
    x0: &DVector<f64>,
    momentum: &DVector<f64>,
) -> Result<TrajectoryCoefficients> {
    if x0.len() != target.dim() || momentum.len() != target.dim() {
        return Err(Error::Dimension("start point or momentum has wrong length".into()));
    }
    if let Some((wall, slack)) = constraints.first_violation(x0) {
        return Err(Error::InfeasibleStart { wall, slack });
    }
    Ok(TrajectoryCoefficients {
        mu: target.mean().clone(),
        a: target.cov().matrix() * momentum,
        b: x0 - target.mean(),
    })
}

/// Earliest `t > t_min` at which the trajectory reaches `f·x = g` from the
/// feasible side.
pub fn wall_hit_time(traj: &TrajectoryCoefficients, normal: &DVector<f64>, offset: f64, t_min: f64) -> Option<f64> {
    let u = normal.dot(&traj.a);
    let v = normal.dot(&traj.b);
    let c = offset - normal.dot(&traj.mu);
    first_upcrossing(u, v, c, t_min, GRAZING_EPSILON)
}

/// Reflects the velocity `ẋ` about the wall with normal `f`, in the whitened
/// frame. The kinetic energy `ẋᵀΣ⁻¹ẋ` is preserved.
pub fn reflect_velocity(velocity: &DVector<f64>, normal: &DVector<f64>, target: &GaussianTarget) -> Result<DVector<f64>> {
    if normal.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("zero wall normal".into()));
    }
    let n = target.factor().tr_mul(normal);
    let mut vt = target.whiten_direction(velocity);
    householder(&mut vt, &n);
    Ok(target.factor() * vt)
}

#[inline]
fn householder(v: &mut DVector<f64>, n: &DVector<f64>) {
    let k = 2.0 * v.dot(n) / n.norm_squared();
    v.axpy(-k, n, 1.0);
}

/// Travel-time and safety settings for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcConfig {
    /// Total travel time `T` per sample.
    pub travel_time: f64,
    /// Bounce cap; `None` means `10·d + 100`.
    pub max_bounces: Option<usize>,
    pub grazing_epsilon: f64,
    /// Draw `T` uniformly from `[0.9T, 1.1T]` for each sample.
    pub jitter: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            travel_time: std::f64::consts::FRAC_PI_2,
            max_bounces: None,
            grazing_epsilon: GRAZING_EPSILON,
            jitter: false,
        }
    }
}

impl HmcConfig {
    pub fn with_travel_time(travel_time: f64) -> Self {
        Self {
            travel_time,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.travel_time > 0.0) || !self.travel_time.is_finite() {
            return Err(Error::InvalidArgument(format!("travel time {} must be positive", self.travel_time)));
        }
        if !(self.grazing_epsilon > 0.0) || self.grazing_epsilon >= 1e-3 * self.travel_time {
            return Err(Error::InvalidArgument(format!(
                "grazing epsilon {} must be positive and much smaller than T",
                self.grazing_epsilon
            )));
        }
        Ok(())
    }

    pub fn bounce_cap(&self, dim: usize) -> usize {
        self.max_bounces.unwrap_or(10 * dim + 100)
    }

    pub(crate) fn draw_travel_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.jitter {
            self.travel_time * rng.random_range(0.9..1.1)
        } else {
            self.travel_time
        }
    }
}

/// One wall impact.
#[derive(Clone, Debug, PartialEq)]
pub struct BounceEvent {
    /// Time since the trajectory started.
    pub time: f64,
    pub wall: usize,
    /// 1-based index of the bounce within its trajectory.
    pub ordinal: usize,
    /// Hamiltonian just after the reflection, in the original frame.
    pub energy: f64,
}

/// Endpoint of one simulated trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryEnd {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub energy_start: f64,
    pub energy_end: f64,
    pub bounces: Vec<BounceEvent>,
}

/// Target plus constraints pre-transformed into the whitened frame.
#[derive(Clone, Debug)]
pub struct ExactHmc {
    target: GaussianTarget,
    constraints: LinearConstraintSet,
    /// `Lᵀf_j`.
    normals: Vec<DVector<f64>>,
    /// `g_j − f_j·μ`.
    offsets: Vec<f64>,
}

impl ExactHmc {
    pub fn new(target: GaussianTarget, constraints: LinearConstraintSet) -> Result<Self> {
        if let Some(f) = constraints.normals.first() {
            if f.len() != target.dim() {
                return Err(Error::Dimension(format!(
                    "walls have {} coordinates, target has {}",
                    f.len(),
                    target.dim()
                )));
            }
        }
        let normals = constraints
            .normals
            .iter()
            .map(|f| target.factor().tr_mul(f))
            .collect();
        let offsets = constraints
            .normals
            .iter()
            .zip(&constraints.offsets)
            .map(|(f, g)| g - f.dot(target.mean()))
            .collect();
        Ok(Self {
            target,
            constraints,
            normals,
            offsets,
        })
    }

    pub fn target(&self) -> &GaussianTarget {
        &self.target
    }

    pub fn constraints(&self) -> &LinearConstraintSet {
        &self.constraints
    }

    fn check_start(&self, x0: &DVector<f64>) -> Result<()> {
        if x0.len() != self.target.dim() {
            return Err(Error::Dimension(format!("start point has {} entries, expected {}", x0.len(), self.target.dim())));
        }
        match self.constraints.first_violation(x0) {
            Some((wall, slack)) => Err(Error::InfeasibleStart { wall, slack }),
            None => Ok(()),
        }
    }

    /// Simulates the bouncing dynamics for `travel_time` from `x0` with
    /// initial velocity `ẋ(0) = velocity`.
    pub fn run_trajectory(
        &self,
        x0: &DVector<f64>,
        velocity: &DVector<f64>,
        travel_time: f64,
        cfg: &HmcConfig,
    ) -> Result<TrajectoryEnd> {
        self.check_start(x0)?;
        let xt = self.target.whiten(x0);
        let vt = self.target.whiten_direction(velocity);
        self.run_whitened(xt, vt, travel_time, cfg)
    }

    fn run_whitened(
        &self,
        mut xt: DVector<f64>,
        mut vt: DVector<f64>,
        travel_time: f64,
        cfg: &HmcConfig,
    ) -> Result<TrajectoryEnd> {
        let energy = |x: &DVector<f64>, v: &DVector<f64>| {
            let xo = self.target.unwhiten(x);
            let vo = self.target.factor() * v;
            self.target.hamiltonian(&xo, &vo)
        };
        let energy_start = energy(&xt, &vt);
        let cap = cfg.bounce_cap(self.target.dim());
        let mut bounces = Vec::new();
        let mut remaining = travel_time;
        loop {
            let mut hit: Option<(f64, usize)> = None;
            for (j, (n, &c)) in self.normals.iter().zip(&self.offsets).enumerate() {
                let u = n.dot(&vt);
                let v = n.dot(&xt);
                if let Some(t) = first_upcrossing(u, v, c, 0.0, cfg.grazing_epsilon) {
                    if t <= remaining && hit.is_none_or(|(best, _)| t < best) {
                        hit = Some((t, j));
                    }
                }
            }
            let step = hit.map_or(remaining, |(t, _)| t);
            let (s, c) = step.sin_cos();
            let x_new = &vt * s + &xt * c;
            let v_new = &vt * c - &xt * s;
            xt = x_new;
            vt = v_new;
            match hit {
                None => break,
                Some((t, wall)) => {
                    householder(&mut vt, &self.normals[wall]);
                    remaining -= t;
                    if bounces.len() == cap {
                        return Err(Error::TooManyBounces {
                            max_bounces: cap,
                            elapsed: travel_time - remaining,
                            travel_time,
                        });
                    }
                    bounces.push(BounceEvent {
                        time: travel_time - remaining,
                        wall,
                        ordinal: bounces.len() + 1,
                        energy: energy(&xt, &vt),
                    });
                }
            }
        }
        Ok(TrajectoryEnd {
            energy_end: energy(&xt, &vt),
            position: self.target.unwhiten(&xt),
            velocity: self.target.factor() * &vt,
            energy_start,
            bounces,
        })
    }

    /// One exact-HMC transition: fresh momentum, bounce until `T` is spent.
    pub fn step<R: Rng + ?Sized>(&self, x0: &DVector<f64>, cfg: &HmcConfig, rng: &mut R) -> Result<TrajectoryEnd> {
        self.check_start(x0)?;
        let travel_time = cfg.draw_travel_time(rng);
        let vt = DVector::from_fn(self.target.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.run_whitened(self.target.whiten(x0), vt, travel_time, cfg)
    }
}

/// Single transition from `x0`; returns the endpoint and its bounce log.
pub fn hmc_step<R: Rng + ?Sized>(
    target: &GaussianTarget,
    constraints: &LinearConstraintSet,
    x0: &DVector<f64>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<(DVector<f64>, Vec<BounceEvent>)> {
    cfg.validate()?;
    let sampler = ExactHmc::new(target.clone(), constraints.clone())?;
    let end = sampler.step(x0, cfg, rng)?;
    Ok((end.position, end.bounces))
}

/// Chain of HMC samples.
#[derive(Clone, Debug)]
pub struct TmvnSamples {
    /// `n_samples × d`.
    pub samples: DMatrix<f64>,
    pub bounces: Vec<usize>,
}

/// Runs `n_samples` transitions starting from `x0`.
pub fn sample_tmvn<R: Rng + ?Sized>(
    target: &GaussianTarget,
    constraints: &LinearConstraintSet,
    x0: &DVector<f64>,
    cfg: &HmcConfig,
    n_samples: usize,
    rng: &mut R,
) -> Result<TmvnSamples> {
    cfg.validate()?;
    let sampler = ExactHmc::new(target.clone(), constraints.clone())?;
    let mut samples = DMatrix::zeros(n_samples, target.dim());
    let mut bounces = Vec::with_capacity(n_samples);
    let mut x = x0.clone();
    for k in 0..n_samples {
        let end = sampler.step(&x, cfg, rng)?;
        x = end.position;
        samples.set_row(k, &x.transpose());
        bounces.push(end.bounces.len());
    }
    Ok(TmvnSamples { samples, bounces })
}
