//! Non-stationary squared-exponential covariance on a torn embedding.
//!
//! Each input carries its embedded position and local metric; a pair is
//! scored with the averaged metric and the determinant prefactor that keeps
//! the construction positive semi-definite.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::covkernel::asymmetry;
use crate::embedding::{EmbeddingSurface, LocalMetric};
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// PSD verdicts accept eigenvalues down to `-PSD_REL_TOL * n * max|entry|`.
pub const PSD_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct NsCovSpec {
    sigma: f64,
    theta: f64,
    alpha3: f64,
    surface: EmbeddingSurface,
}

/// An input lifted onto the surface, with its local metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPoint {
    pub v: Vector3<f64>,
    pub metric: Matrix3<f64>,
    pub det: f64,
}

impl EmbeddedPoint {
    pub fn new(v: Vector3<f64>, metric: &LocalMetric) -> Self {
        EmbeddedPoint {
            v,
            metric: metric.sigma3d,
            det: metric.det(),
        }
    }
}

impl NsCovSpec {
    pub fn new(sigma: f64, theta: f64, alpha3: f64, surface: EmbeddingSurface) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("theta", theta), ("alpha3", alpha3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(NsCovSpec {
            sigma,
            theta,
            alpha3,
            surface,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha3(&self) -> f64 {
        self.alpha3
    }

    pub fn surface(&self) -> &EmbeddingSurface {
        &self.surface
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        NsCovSpec::new(self.sigma, theta, self.alpha3, self.surface.clone())
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        NsCovSpec::new(sigma, self.theta, self.alpha3, self.surface.clone())
    }

    pub fn embed_point(&self, p: Point2) -> Result<EmbeddedPoint> {
        let v = self.surface.embed(p)?;
        let metric = self.surface.local_metric(p, self.theta, self.alpha3)?;
        Ok(EmbeddedPoint::new(v, &metric))
    }

    pub fn embed_points(&self, pts: &[Point2]) -> Result<Vec<EmbeddedPoint>> {
        pts.par_iter().map(|&p| self.embed_point(p)).collect()
    }

    pub fn quadratic_form(&self, a: Point2, b: Point2) -> Result<f64> {
        embedded_quadratic_form(&self.embed_point(a)?, &self.embed_point(b)?)
    }

    pub fn covariance(&self, a: Point2, b: Point2) -> Result<f64> {
        embedded_covariance(self.sigma, &self.embed_point(a)?, &self.embed_point(b)?)
    }

    pub fn cov_matrix(&self, pts: &[Point2]) -> Result<DMatrix<f64>> {
        embedded_cov_matrix(self.sigma, &self.embed_points(pts)?)
    }

    pub fn cross_cov(&self, rows: &[Point2], cols: &[Point2]) -> Result<DMatrix<f64>> {
        embedded_cross_cov(self.sigma, &self.embed_points(rows)?, &self.embed_points(cols)?)
    }
}

/// `Q = d' ((S_a + S_b) / 2)^-1 d` with `d = v_a - v_b`.
pub fn embedded_quadratic_form(a: &EmbeddedPoint, b: &EmbeddedPoint) -> Result<f64> {
    Ok(pair_terms(a, b)?.0)
}

fn pair_terms(a: &EmbeddedPoint, b: &EmbeddedPoint) -> Result<(f64, f64)> {
    let sum = a.metric + b.metric;
    let chol = sum
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("averaged local metric".into()))?;
    let d = a.v - b.v;
    let q = 2.0 * d.dot(&chol.solve(&d));
    let l = chol.l_dirty();
    let det_sum = (l[(0, 0)] * l[(1, 1)] * l[(2, 2)]).powi(2);
    Ok((q, det_sum))
}

pub fn embedded_covariance(sigma: f64, a: &EmbeddedPoint, b: &EmbeddedPoint) -> Result<f64> {
    let s2 = sigma * sigma;
    if a == b {
        return Ok(s2);
    }
    let (q, det_sum) = pair_terms(a, b)?;
    let pref = 2f64.powf(1.5) * (a.det * b.det).powf(0.25) / det_sum.sqrt();
    let c = s2 * pref * (-q).exp();
    if !c.is_finite() {
        return Err(Error::NonFinite("non-stationary covariance entry".into()));
    }
    Ok(c)
}

pub fn embedded_cov_matrix(sigma: f64, pts: &[EmbeddedPoint]) -> Result<DMatrix<f64>> {
    let n = pts.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..i)
                .map(|j| embedded_covariance(sigma, &pts[i], &pts[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::from_element(n, n, sigma * sigma);
    for (i, row) in rows.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(m)
}

pub fn embedded_cross_cov(
    sigma: f64,
    rows: &[EmbeddedPoint],
    cols: &[EmbeddedPoint],
) -> Result<DMatrix<f64>> {
    let data: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|r| cols.iter().map(|c| embedded_covariance(sigma, r, c)).collect())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| data[i][j]))
}

/// The general `d`-dimensional non-stationary SE covariance between `xa`
/// with local metric `sa` and `xb` with `sb`.
pub fn paciorek_covariance(
    sigma: f64,
    xa: &[f64],
    sa: &DMatrix<f64>,
    xb: &[f64],
    sb: &DMatrix<f64>,
) -> Result<f64> {
    let d = xa.len();
    for m in [sa, sb] {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.nrows(),
            });
        }
    }
    if xb.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: xb.len(),
        });
    }
    let chol_det = |m: DMatrix<f64>, what: &str| -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
        let c = m
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
        let det = c.l_dirty().diagonal().iter().map(|v| v * v).product();
        Ok((c, det))
    };
    let (_, det_a) = chol_det(sa.clone(), "first local metric")?;
    let (_, det_b) = chol_det(sb.clone(), "second local metric")?;
    let (chol, det_sum) = chol_det(sa + sb, "averaged local metric")?;
    let diff = DVector::from_iterator(d, xa.iter().zip(xb).map(|(a, b)| a - b));
    let q = 2.0 * diff.dot(&chol.solve(&diff));
    let pref = 2f64.powf(d as f64 / 2.0) * (det_a * det_b).powf(0.25) / det_sum.sqrt();
    Ok(sigma * sigma * pref * (-q).exp())
}

/// Smallest eigenvalue and the PSD verdict.
pub fn min_eigenvalue_check(m: &DMatrix<f64>) -> Result<(f64, bool)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if n == 0 {
        return Ok((f64::INFINITY, true));
    }
    let scale = m.amax();
    let asym = asymmetry(m);
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let min = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok((min, min >= -PSD_REL_TOL * n as f64 * scale))
}

/// Correlation lengths above this make the geodesic matrix indefinite.
pub fn geodesic_threshold() -> f64 {
    0.25 / (0.5 * std::f64::consts::LN_2).sqrt()
}

/// The four-point example where distances measured around a tear tip give
/// an invalid SE correlation matrix. Points: A=(0.5,1), B=(0.75,1), and C, D
/// at (1,1) on either side of a tear that ends at B.
pub fn geodesic_counterexample(theta: f64) -> Result<(DMatrix<f64>, f64)> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    const D: [[f64; 4]; 4] = [
        [0.0, 0.25, 0.5, 0.5],
        [0.25, 0.0, 0.25, 0.25],
        [0.5, 0.25, 0.0, 0.5],
        [0.5, 0.25, 0.5, 0.0],
    ];
    let m = DMatrix::from_fn(4, 4, |i, j| (-(D[i][j] / theta).powi(2)).exp());
    let (min, _) = min_eigenvalue_check(&m)?;
    Ok((m, min))
}
