//! Bayes linear emulation with a constant prior mean.
//!
//! The adjusted moments at `x` given runs `D` are
//! `E_D = m + k(x)' V^-1 (D - m)` and `Var_D = sigma^2 - k(x)' V^-1 k(x)`,
//! where `V = Var(D)` plus a small nugget on the diagonal.

mod diagnostics;
mod quantile;

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::covkernel::KernelSpec;
use crate::embedding::EmbeddingSurface;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::nscov::{embedded_covariance, EmbeddedPoint, NsCovSpec};

pub use diagnostics::{estimate_theta_mle, loo_diagnostics, profile_log_likelihood, LooRecord, MleOptions, MleResult};
pub use quantile::{empirical_quantile, quantile_emulate, QuantileTarget};

pub const DEFAULT_NUGGET: f64 = 1e-8;
pub const MAX_NUGGET: f64 = 1e-2;
/// Nugget escalation stops here (relative to sigma^2).
pub const NUGGET_CEILING: f64 = 1e-4;
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_CEILING: f64 = 1e-4;
pub const GHOST_LABEL: &str = "ghost";

/// How prior correlations between inputs are computed.
#[derive(Debug, Clone)]
pub enum KernelMode {
    /// Stationary kernel directly on the 2-D inputs.
    Stationary2D(KernelSpec),
    /// Non-stationary SE on the torn embedding.
    Tense {
        theta: f64,
        alpha3: f64,
        surface: EmbeddingSurface,
    },
}

/// An input prepared for correlation evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Plain(Point2),
    Embedded(EmbeddedPoint),
}

impl Feature {
    /// Position used for nearest-neighbour searches.
    pub fn position(&self) -> Vector3<f64> {
        match self {
            Feature::Plain(p) => Vector3::new(p.x, p.y, 0.0),
            Feature::Embedded(e) => e.v,
        }
    }
}

impl KernelMode {
    pub fn tense(theta: f64, alpha3: f64, surface: EmbeddingSurface) -> Result<Self> {
        // Validate through the covariance spec.
        NsCovSpec::new(1.0, theta, alpha3, surface.clone())?;
        Ok(KernelMode::Tense { theta, alpha3, surface })
    }

    pub fn theta(&self) -> f64 {
        match self {
            KernelMode::Stationary2D(k) => k.theta(),
            KernelMode::Tense { theta, .. } => *theta,
        }
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        match self {
            KernelMode::Stationary2D(k) => Ok(KernelMode::Stationary2D(k.with_theta(theta)?)),
            KernelMode::Tense { alpha3, surface, .. } => KernelMode::tense(theta, *alpha3, surface.clone()),
        }
    }

    /// The equivalent covariance spec in Tense mode.
    pub fn ns_spec(&self, sigma: f64) -> Option<NsCovSpec> {
        match self {
            KernelMode::Tense { theta, alpha3, surface } => NsCovSpec::new(sigma, *theta, *alpha3, surface.clone()).ok(),
            KernelMode::Stationary2D(_) => None,
        }
    }

    pub fn feature(&self, p: Point2) -> Result<Feature> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::NonFinite(format!("input ({}, {})", p.x, p.y)));
        }
        match self {
            KernelMode::Stationary2D(k) => {
                if k.dim() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        got: k.dim(),
                    });
                }
                Ok(Feature::Plain(p))
            }
            KernelMode::Tense { theta, alpha3, surface } => {
                let v = surface.embed(p)?;
                let metric = surface.local_metric(p, *theta, *alpha3)?;
                Ok(Feature::Embedded(EmbeddedPoint::new(v, &metric)))
            }
        }
    }

    pub fn features(&self, pts: &[Point2]) -> Result<Vec<Feature>> {
        pts.par_iter().map(|&p| self.feature(p)).collect()
    }

    pub fn correlation(&self, a: &Feature, b: &Feature) -> Result<f64> {
        match (self, a, b) {
            (KernelMode::Stationary2D(k), Feature::Plain(p), Feature::Plain(q)) => k.correlation(&[p.x - q.x, p.y - q.y]),
            (KernelMode::Tense { .. }, Feature::Embedded(p), Feature::Embedded(q)) => embedded_covariance(1.0, p, q),
            _ => Err(Error::InvalidParameter("feature does not match the kernel mode".into())),
        }
    }

    /// Symmetric correlation matrix with an exact unit diagonal.
    pub fn corr_matrix(&self, f: &[Feature]) -> Result<DMatrix<f64>> {
        let n = f.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..i).map(|j| self.correlation(&f[i], &f[j])).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?;
        let mut m = DMatrix::identity(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                m[(i, j)] = c;
                m[(j, i)] = c;
            }
        }
        Ok(m)
    }

    /// `rows x cols` cross-correlation.
    pub fn cross_corr(&self, rows: &[Feature], cols: &[Feature]) -> Result<DMatrix<f64>> {
        let data: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|r| cols.iter().map(|c| self.correlation(r, c)).collect())
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| data[i][j]))
    }
}

/// Constant-mean second-order prior.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub mean: f64,
    pub sigma: f64,
    pub kernel: KernelMode,
    /// Fraction of sigma^2 added to the diagonal of `Var(D)`.
    pub nugget: f64,
}

impl PriorSpec {
    pub fn new(mean: f64, sigma: f64, kernel: KernelMode) -> Result<Self> {
        let p = PriorSpec {
            mean,
            sigma,
            kernel,
            nugget: DEFAULT_NUGGET,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        self.nugget = nugget;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::InvalidParameter(format!("prior mean must be finite, got {}", self.mean)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..=MAX_NUGGET).contains(&self.nugget) {
            return Err(Error::InvalidParameter(format!(
                "nugget must lie in [0, {MAX_NUGGET}], got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Runs `(x_i, f(x_i))` with optional labels such as `"ghost"`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub points: Vec<Point2>,
    pub values: Vec<f64>,
    pub labels: Vec<Option<String>>,
}

impl TrainingSet {
    pub fn new(points: Vec<Point2>, values: Vec<f64>) -> Result<Self> {
        let labels = vec![None; points.len()];
        Self::with_labels(points, values, labels)
    }

    pub fn with_labels(points: Vec<Point2>, values: Vec<f64>, labels: Vec<Option<String>>) -> Result<Self> {
        let t = TrainingSet { points, values, labels };
        t.validate()?;
        Ok(t)
    }

    pub fn empty() -> Self {
        TrainingSet::default()
    }

    /// Zero-valued runs labelled as ghosts.
    pub fn ghosts(points: Vec<Point2>) -> Result<Self> {
        let n = points.len();
        Self::with_labels(points, vec![0.0; n], vec![Some(GHOST_LABEL.to_string()); n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_ghost(&self, i: usize) -> bool {
        self.labels.get(i).and_then(|l| l.as_deref()) == Some(GHOST_LABEL)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        for len in [self.values.len(), self.labels.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("run value {v}")));
        }
        let mut sorted: Vec<Point2> = self.points.clone();
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePoint { x: w[0].x, y: w[0].y });
        }
        Ok(())
    }

    /// Concatenation; duplicates across the two sets are rejected.
    pub fn join(&self, other: &TrainingSet) -> Result<Self> {
        let mut t = self.clone();
        t.points.extend_from_slice(&other.points);
        t.values.extend_from_slice(&other.values);
        t.labels.extend_from_slice(&other.labels);
        t.validate()?;
        Ok(t)
    }

    /// The subset whose indices satisfy `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        TrainingSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    pub fn without_ghosts(&self) -> Self {
        self.filter(|i| !self.is_ghost(i))
    }
}

/// The prior adjusted by a set of runs. Immutable after build; queries may
/// run concurrently.
#[derive(Debug)]
pub struct AdjustedEmulator {
    prior: PriorSpec,
    data: TrainingSet,
    features: Vec<Feature>,
    chol: Option<Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    nugget_used: f64,
    clamps: AtomicUsize,
}

impl Clone for AdjustedEmulator {
    fn clone(&self) -> Self {
        AdjustedEmulator {
            prior: self.prior.clone(),
            data: self.data.clone(),
            features: self.features.clone(),
            chol: self.chol.clone(),
            weights: self.weights.clone(),
            nugget_used: self.nugget_used,
            clamps: AtomicUsize::new(self.clamps.load(Ordering::Relaxed)),
        }
    }
}

/// Cholesky of `sigma^2 (R + nugget I)`, escalating the nugget tenfold on
/// failure up to [`NUGGET_CEILING`]. Returns the factor and the nugget used.
pub(crate) fn factor_with_nugget(corr: &DMatrix<f64>, sigma2: f64, nugget: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = corr.nrows();
    let mut nug = nugget;
    loop {
        let mut k = corr * sigma2;
        for i in 0..n {
            k[(i, i)] += nug * sigma2;
        }
        if let Some(c) = Cholesky::new(k) {
            return Ok((c, nug));
        }
        let next = if nug == 0.0 { 1e-12 } else { nug * 10.0 };
        if next > NUGGET_CEILING * (1.0 + 1e-9) || nug >= NUGGET_CEILING {
            return Err(Error::Factorization(format!(
                "Var(D) of {n} runs is not positive definite even with nugget {nug:e} sigma^2; \
                 runs may be nearly coincident relative to the correlation length"
            )));
        }
        nug = next;
    }
}

impl AdjustedEmulator {
    pub fn build(prior: PriorSpec, data: TrainingSet) -> Result<Self> {
        prior.validate()?;
        data.validate()?;
        let features = prior.kernel.features(&data.points)?;
        let n = data.len();
        if n == 0 {
            return Ok(AdjustedEmulator {
                prior,
                data,
                features,
                chol: None,
                weights: DVector::zeros(0),
                nugget_used: 0.0,
                clamps: AtomicUsize::new(0),
            });
        }
        let corr = prior.kernel.corr_matrix(&features)?;
        let (chol, nugget_used) = factor_with_nugget(&corr, prior.variance(), prior.nugget)?;
        let resid = DVector::from_iterator(n, data.values.iter().map(|v| v - prior.mean));
        let weights = chol.solve(&resid);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("adjustment weights".into()));
        }
        Ok(AdjustedEmulator {
            prior,
            data,
            features,
            chol: Some(chol),
            weights,
            nugget_used,
            clamps: AtomicUsize::new(0),
        })
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn nugget_used(&self) -> f64 {
        self.nugget_used
    }

    /// Number of negative variances clamped to zero so far.
    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_clamps(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }

    /// `Cov(f(x), D)` for one query feature.
    fn cov_to_data(&self, f: &Feature) -> Result<DVector<f64>> {
        let s2 = self.prior.variance();
        let mut k = DVector::zeros(self.features.len());
        for (i, d) in self.features.iter().enumerate() {
            k[i] = s2 * self.prior.kernel.correlation(f, d)?;
        }
        Ok(k)
    }

    /// Adjusted mean and variance at `x`.
    pub fn adjusted_moments(&self, x: Point2) -> Result<(f64, f64)> {
        let f = self.prior.kernel.feature(x)?;
        self.moments_at(&f)
    }

    pub fn moments_at(&self, f: &Feature) -> Result<(f64, f64)> {
        let s2 = self.prior.variance();
        let Some(chol) = &self.chol else {
            return Ok((self.prior.mean, s2));
        };
        let k = self.cov_to_data(f)?;
        let mean = self.prior.mean + k.dot(&self.weights);
        let z = chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Factorization("triangular solve".into()))?;
        let mut var = s2 - z.norm_squared();
        if var < 0.0 {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Moments over many points, in parallel.
    pub fn predict(&self, pts: &[Point2]) -> Result<Vec<(f64, f64)>> {
        pts.par_iter().map(|&p| self.adjusted_moments(p)).collect()
    }

    /// Joint adjusted means and covariance over `pts`.
    pub fn joint_adjusted_cov(&self, pts: &[Point2]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s2 = self.prior.variance();
        let fp = self.prior.kernel.features(pts)?;
        let mut cov = self.prior.kernel.corr_matrix(&fp)? * s2;
        let mut means = DVector::from_element(pts.len(), self.prior.mean);
        if let Some(chol) = &self.chol {
            let k = self.prior.kernel.cross_corr(&self.features, &fp)? * s2;
            means += k.transpose() * &self.weights;
            let z = chol
                .l_dirty()
                .solve_lower_triangular(&k)
                .ok_or_else(|| Error::Factorization("triangular solve".into()))?;
            cov -= z.transpose() * &z;
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        Ok((means, sym))
    }

    /// `count` joint draws over `grid`, one column per draw.
    ///
    /// The joint covariance is factorized with a diagonal jitter that starts
    /// at `1e-10 sigma^2` and grows tenfold up to `1e-4 sigma^2`.
    pub fn sample_realizations(&self, grid: &[Point2], count: usize, seed: u64) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::InvalidParameter("need at least one realization".into()));
        }
        let (means, cov) = self.joint_adjusted_cov(grid)?;
        let s2 = self.prior.variance();
        let n = grid.len();
        let mut jitter = JITTER_START;
        let l = loop {
            let mut c = cov.clone();
            for i in 0..n {
                c[(i, i)] += jitter * s2;
            }
            if let Some(ch) = Cholesky::new(c) {
                break ch.unpack();
            }
            jitter *= 10.0;
            if jitter > JITTER_CEILING * (1.0 + 1e-9) {
                return Err(Error::JitterExhausted { jitter: jitter / 10.0 });
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, count);
        for s in 0..count {
            let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let draw = &means + &l * z;
            out.set_column(s, &draw);
        }
        Ok(out)
    }
}
