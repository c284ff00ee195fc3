//! Stationary correlation functions and Mahalanobis distances.
//!
//! These serve both as the plain 2-D baseline emulator and as the radial
//! profile inside the non-stationary construction in [`crate::nscov`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bessel::bessel_k;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern { nu: f64 },
}

/// A validated stationary correlation function.
///
/// For the squared exponential the correlation is `exp(-dx' M^-1 dx)` with
/// `M = metric`; the isotropic constructor sets `M = theta^2 I`. The Matérn
/// family uses the Euclidean norm of `dx` scaled by `theta`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    theta: f64,
    metric: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, theta: f64, metric: DMatrix<f64>) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")));
        }
        if let KernelFamily::Matern { nu } = family {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(Error::InvalidParameter(format!("Matérn nu must be > 0, got {nu}")));
            }
        }
        let factor = factor_spd(&metric, "kernel metric")?;
        Ok(KernelSpec {
            family,
            theta,
            metric,
            factor,
        })
    }

    /// Squared exponential with metric `theta^2 I_dim`.
    pub fn squared_exponential(theta: f64, dim: usize) -> Result<Self> {
        Self::new(
            KernelFamily::SquaredExponential,
            theta,
            DMatrix::identity(dim, dim) * (theta * theta),
        )
    }

    pub fn matern(nu: f64, theta: f64, dim: usize) -> Result<Self> {
        Self::new(
            KernelFamily::Matern { nu },
            theta,
            DMatrix::identity(dim, dim) * (theta * theta),
        )
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }

    /// Same family and dimension, isotropic metric rebuilt for a new `theta`.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(
            self.family,
            theta,
            DMatrix::identity(self.dim(), self.dim()) * (theta * theta),
        )
    }

    /// Correlation at offset `dx`.
    pub fn correlation(&self, dx: &[f64]) -> Result<f64> {
        if dx.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dx.len(),
            });
        }
        if dx.iter().all(|&d| d == 0.0) {
            return Ok(1.0);
        }
        Ok(match self.family {
            KernelFamily::SquaredExponential => (-quad_form(&self.factor, dx)).exp(),
            KernelFamily::Matern { nu } => {
                let r = dx.iter().map(|d| d * d).sum::<f64>().sqrt();
                matern_correlation(nu, r / self.theta)
            }
        })
    }
}

pub(crate) fn factor_spd(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asym = asymmetry(m);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn quad_form(factor: &Cholesky<f64, Dyn>, dx: &[f64]) -> f64 {
    let v = DVector::from_column_slice(dx);
    let z = factor
        .l_dirty()
        .solve_lower_triangular(&v)
        .expect("Cholesky factor has a positive diagonal");
    z.norm_squared()
}

/// `dx' metric^-1 dx`, computed through a Cholesky solve.
pub fn mahalanobis_sq(dx: &[f64], metric: &DMatrix<f64>) -> Result<f64> {
    if dx.len() != metric.nrows() {
        return Err(Error::DimensionMismatch {
            expected: metric.nrows(),
            got: dx.len(),
        });
    }
    let factor = factor_spd(metric, "Mahalanobis metric")?;
    Ok(quad_form(&factor, dx))
}

/// Matérn correlation at scaled distance `s = |dx| / theta`.
///
/// Half-integer orders 1/2, 3/2 and 5/2 use their closed forms; everything
/// else goes through the Bessel routine in log space.
pub fn matern_correlation(nu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    let z = (2.0 * nu).sqrt() * s;
    if nu == 0.5 {
        (-z).exp()
    } else if nu == 1.5 {
        (1.0 + z) * (-z).exp()
    } else if nu == 2.5 {
        (1.0 + z + z * z / 3.0) * (-z).exp()
    } else {
        matern_general(nu, z)
    }
}

/// Bessel-based Matérn evaluated at `z = sqrt(2 nu) |dx| / theta`.
pub(crate) fn matern_general(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    let k = bessel_k(nu, z);
    if k == 0.0 {
        return 0.0;
    }
    let log_r = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + k.ln();
    log_r.exp().min(1.0)
}

/// `sigma^2 * r(x_i - x_j)` over all pairs.
pub fn stationary_cov_matrix(spec: &KernelSpec, sigma: f64, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    for p in points {
        if p.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: p.len(),
            });
        }
    }
    let s2 = sigma * sigma;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return s2;
                    }
                    let dx: Vec<f64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
                    s2 * spec.correlation(&dx).expect("dimension checked above")
                })
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    // symmetric by construction up to the evaluation order of dx
    let mt = m.transpose();
    Ok((m + mt) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mahalanobis_examples() {
        let id = DMatrix::identity(2, 2);
        assert_relative_eq!(mahalanobis_sq(&[0.3, 0.4], &id).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(mahalanobis_sq(&[0.0, 0.0], &id).unwrap(), 0.0);
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 3.0]);
        assert_relative_eq!(mahalanobis_sq(&[1.0, 0.0, 1.0], &m).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn mahalanobis_rejects_bad_metric() {
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            mahalanobis_sq(&[1.0, 0.0], &not_pd),
            Err(Error::NotPositiveDefinite(_))
        ));
        let id = DMatrix::identity(2, 2);
        assert!(matches!(
            mahalanobis_sq(&[1.0], &id),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn correlation_examples() {
        let se = KernelSpec::squared_exponential(1.0, 2).unwrap();
        assert_relative_eq!(se.correlation(&[0.3, 0.4]).unwrap(), 0.778_800_783_071_404_9, epsilon = 1e-15);
        assert_eq!(se.correlation(&[0.0, 0.0]).unwrap(), 1.0);
        let m = KernelSpec::matern(0.5, 1.0, 2).unwrap();
        assert_eq!(m.correlation(&[0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(m.correlation(&[0.7, 0.0]).unwrap(), 0.496_585_303_791_409_6, epsilon = 1e-14);
    }

    // (nu, |dx| with theta = 1, reference) from SciPy's kv/gamma.
    const MATERN_REFERENCE: &[(f64, f64, f64)] = &[
        (0.5, 0.3, 0.7408182206817181),
        (1.5, 0.3, 0.9037901598990388),
        (1.5, 1.9, 0.1597091643056154),
        (2.5, 0.7, 0.7069426819040978),
        (2.5, 5.0, 0.0007509337888737549),
        (0.8, 0.01, 0.9987057594528053),
        (0.8, 1.9, 0.15577735152639818),
        (1.0, 0.7, 0.6061478437438632),
        (3.7, 0.3, 0.9411619259158152),
        (3.7, 5.0, 0.0003905428710458124),
        (7.25, 0.7, 0.7579745623439712),
        (7.25, 5.0, 0.0001254855744431151),
    ];

    #[test]
    fn matern_reference_values() {
        for &(nu, d, want) in MATERN_REFERENCE {
            let k = KernelSpec::matern(nu, 1.0, 1).unwrap();
            let got = k.correlation(&[d]).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-11);
        }
    }

    #[test]
    fn general_path_agrees_with_closed_forms() {
        for nu in [0.5f64, 1.5, 2.5] {
            for &s in &[0.05, 0.4, 1.3, 3.0] {
                let z = (2.0 * nu).sqrt() * s;
                assert_relative_eq!(matern_general(nu, z), matern_correlation(nu, s), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cov_matrix_small_cases() {
        let se = KernelSpec::squared_exponential(1.0, 2).unwrap();
        let one = stationary_cov_matrix(&se, 2.0, &[vec![0.1, 0.2]]).unwrap();
        assert_eq!(one[(0, 0)], 4.0);
        let two = stationary_cov_matrix(&se, 1.0, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(two, DMatrix::from_element(2, 2, 1.0));
        assert_eq!(stationary_cov_matrix(&se, 1.0, &[]).unwrap().nrows(), 0);
    }

    #[test]
    fn euclidean_four_point_configuration_is_psd() {
        // The geodesic counter-example points with ordinary distances.
        let pts = vec![vec![0.5, 1.0], vec![0.75, 1.0], vec![1.0, 1.0 + 1e-9], vec![1.0, 1.0 - 1e-9]];
        let se = KernelSpec::squared_exponential(1.0, 2).unwrap();
        let m = stationary_cov_matrix(&se, 1.0, &pts).unwrap();
        let min = SymmetricEigen::new(m).eigenvalues.min();
        assert!(min >= -1e-12, "min eig {min}");
    }

    #[test]
    fn random_sets_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let n = rng.random_range(1..=50);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0]).collect();
            let spec = if trial % 2 == 0 {
                KernelSpec::squared_exponential(0.2 + rng.random::<f64>(), 2).unwrap()
            } else {
                KernelSpec::matern([0.5, 1.5, 2.5, 1.2][trial % 4], 0.2 + rng.random::<f64>(), 2).unwrap()
            };
            let sigma = 0.5 + rng.random::<f64>();
            let m = stationary_cov_matrix(&spec, sigma, &pts).unwrap();
            let min = SymmetricEigen::new(m).eigenvalues.min();
            assert!(min >= -1e-10 * sigma * sigma * n as f64, "trial {trial}: min eig {min}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::squared_exponential(0.0, 2).is_err());
        assert!(KernelSpec::matern(-1.0, 1.0, 2).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            KernelSpec::new(KernelFamily::SquaredExponential, 1.0, asym),
            Err(Error::NotSymmetric(_))
        ));
    }

    proptest! {
        #[test]
        fn correlation_in_unit_interval(dx in -3.0f64..3.0, dy in -3.0f64..3.0, theta in 0.1f64..3.0, pick in 0usize..4) {
            let nu = [0.5, 1.5, 2.5, 0.9][pick];
            for spec in [KernelSpec::squared_exponential(theta, 2).unwrap(), KernelSpec::matern(nu, theta, 2).unwrap()] {
                let r = spec.correlation(&[dx, dy]).unwrap();
                prop_assert!(r <= 1.0);
                prop_assert!(r >= 0.0);
                if dx != 0.0 || dy != 0.0 {
                    prop_assert!(r < 1.0 || (dx * dx + dy * dy) / (theta * theta) < 1e-15);
                }
            }
        }

        #[test]
        fn se_rotation_invariant(dx in -2.0f64..2.0, dy in -2.0f64..2.0, angle in 0.0f64..6.3, theta in 0.2f64..2.0) {
            let spec = KernelSpec::squared_exponential(theta, 2).unwrap();
            let (s, c) = angle.sin_cos();
            let a = spec.correlation(&[dx, dy]).unwrap();
            let b = spec.correlation(&[c * dx - s * dy, s * dx + c * dy]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn matern_half_is_exponential(d in 0.0f64..10.0, theta in 0.05f64..5.0) {
            let spec = KernelSpec::matern(0.5, theta, 1).unwrap();
            let want = (-d / theta).exp();
            let got = spec.correlation(&[d]).unwrap();
            prop_assert!(((got - want) / want).abs() <= 1e-12);
        }
    }
}
