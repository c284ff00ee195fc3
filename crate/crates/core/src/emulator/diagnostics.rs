//! Leave-one-out diagnostics and maximum-likelihood estimation of theta.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{factor_with_nugget, AdjustedEmulator, PriorSpec, TrainingSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooRecord {
    pub index: usize,
    pub point: Point2,
    pub observed: f64,
    pub mean: f64,
    pub sd: f64,
    pub standardized: f64,
}

/// For each non-ghost run, rebuild without it and predict it back.
/// Ghost runs stay in every rebuild and are never left out themselves.
pub fn loo_diagnostics(prior: &PriorSpec, data: &TrainingSet) -> Result<Vec<LooRecord>> {
    data.validate()?;
    let targets: Vec<usize> = (0..data.len()).filter(|&i| !data.is_ghost(i)).collect();
    if targets.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "leave-one-out needs at least 3 runs, got {}",
            targets.len()
        )));
    }
    targets
        .par_iter()
        .map(|&i| {
            let rest = data.filter(|j| j != i);
            let em = AdjustedEmulator::build(prior.clone(), rest)?;
            let point = data.points[i];
            let (mean, var) = em.adjusted_moments(point)?;
            let sd = var.sqrt();
            let err = data.values[i] - mean;
            let standardized = if sd > 0.0 {
                err / sd
            } else if err == 0.0 {
                0.0
            } else {
                err.signum() * f64::INFINITY
            };
            Ok(LooRecord {
                index: i,
                point,
                observed: data.values[i],
                mean,
                sd,
                standardized,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    /// Include ghost runs in the likelihood.
    pub include_ghosts: bool,
    /// Log-spaced scan points before the golden-section refinement.
    pub scan_points: usize,
    /// Relative tolerance on theta.
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            include_ghosts: false,
            scan_points: 25,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleResult {
    pub theta: f64,
    pub log_likelihood: f64,
    /// Profiled prior variance at `theta`.
    pub sigma2: f64,
    pub mean: f64,
    pub bounds: (f64, f64),
    pub runs_used: usize,
}

/// Gaussian log-likelihood at `theta` with `m` fixed and `sigma^2` profiled.
/// Returns `(log_likelihood, sigma2_hat)`.
pub fn profile_log_likelihood(template: &PriorSpec, points: &[Point2], values: &[f64], mean: f64, theta: f64) -> Result<(f64, f64)> {
    let kernel = template.kernel.with_theta(theta)?;
    let f = kernel.features(points)?;
    let corr = kernel.corr_matrix(&f)?;
    let (chol, _) = factor_with_nugget(&corr, 1.0, template.nugget)?;
    let n = values.len() as f64;
    let e = DVector::from_iterator(values.len(), values.iter().map(|v| v - mean));
    let quad = e.dot(&chol.solve(&e));
    let sigma2 = quad / n;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("runs carry no variation about the mean".into()));
    }
    let ll = -0.5 * n * (sigma2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln()) - 0.5 * log_det;
    Ok((ll, sigma2))
}

/// Maximize the profiled likelihood over `log theta` within `bounds`: a
/// log-spaced scan locates the best bracket, golden-section search refines it.
pub fn estimate_theta_mle(template: &PriorSpec, data: &TrainingSet, bounds: (f64, f64), opts: MleOptions) -> Result<MleResult> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta bounds must satisfy 0 < lo < hi, got {bounds:?}")));
    }
    let used = if opts.include_ghosts { data.clone() } else { data.without_ghosts() };
    used.validate()?;
    if used.len() < 5 {
        return Err(Error::InvalidParameter(format!("MLE needs at least 5 runs, got {}", used.len())));
    }
    let mean = used.values.iter().sum::<f64>() / used.len() as f64;
    if used.values.iter().all(|&v| v == mean) {
        return Err(Error::Degenerate("constant runs carry no information about theta".into()));
    }
    let ll = |log_t: f64| -> f64 {
        profile_log_likelihood(template, &used.points, &used.values, mean, log_t.exp())
            .map(|(l, _)| l)
            .ok()
            .filter(|l| l.is_finite())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (a, b) = (lo.ln(), hi.ln());
    let k = opts.scan_points.max(3);
    let grid: Vec<f64> = (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect();
    let scores: Vec<f64> = grid.par_iter().map(|&t| ll(t)).collect();
    let best = (0..k)
        .filter(|&i| scores[i].is_finite())
        .max_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(j.cmp(&i)))
        .ok_or_else(|| Error::NonFinite("log-likelihood is not finite anywhere in the theta bracket".into()))?;
    let (mut x0, mut x3) = (grid[best.saturating_sub(1)], grid[(best + 1).min(k - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = x3 - inv_phi * (x3 - x0);
    let mut x2 = x0 + inv_phi * (x3 - x0);
    let (mut f1, mut f2) = (ll(x1), ll(x2));
    while x3 - x0 > opts.tol {
        if f1 >= f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - inv_phi * (x3 - x0);
            f1 = ll(x1);
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + inv_phi * (x3 - x0);
            f2 = ll(x2);
        }
    }
    // The refined optimum must beat the scan, else keep the scan point.
    let (mut log_t, mut best_ll) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if scores[best] > best_ll {
        log_t = grid[best];
        best_ll = scores[best];
    }
    let theta = log_t.exp();
    let (_, sigma2) = profile_log_likelihood(template, &used.points, &used.values, mean, theta)?;
    Ok(MleResult {
        theta,
        log_likelihood: best_ll,
        sigma2,
        mean,
        bounds,
        runs_used: used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covkernel::KernelSpec;
    use crate::emulator::KernelMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(theta: f64) -> PriorSpec {
        PriorSpec::new(0.0, 1.0, KernelMode::Stationary2D(KernelSpec::squared_exponential(theta, 2).unwrap())).unwrap()
    }

    #[test]
    fn loo_constant_data_is_exact() {
        let pts: Vec<Point2> = (0..6).map(|i| Point2::new(0.3 * i as f64, 0.1 * i as f64)).collect();
        let mut p = prior(0.5);
        p.mean = 2.0;
        let rec = loo_diagnostics(&p, &TrainingSet::new(pts, vec![2.0; 6]).unwrap()).unwrap();
        assert!(rec.iter().all(|r| r.standardized == 0.0));
    }

    #[test]
    fn loo_skips_ghosts() {
        let runs = TrainingSet::new(
            vec![Point2::new(0.2, 0.2), Point2::new(0.8, 0.4), Point2::new(1.2, 1.5), Point2::new(0.4, 1.0)],
            vec![0.1, 0.4, -0.2, 0.3],
        )
        .unwrap();
        let ghosts = TrainingSet::ghosts(vec![Point2::new(2.0, 0.0), Point2::new(2.0, 2.0)]).unwrap();
        let rec = loo_diagnostics(&prior(0.7), &runs.join(&ghosts).unwrap()).unwrap();
        assert_eq!(rec.len(), 4);
        assert!(loo_diagnostics(&prior(0.7), &runs.filter(|i| i < 2)).is_err());
    }

    #[test]
    fn likelihood_rejects_bad_brackets() {
        let data = TrainingSet::new(vec![Point2::new(0.0, 0.0)], vec![1.0]).unwrap();
        assert!(estimate_theta_mle(&prior(1.0), &data, (0.0, 1.0), MleOptions::default()).is_err());
        assert!(estimate_theta_mle(&prior(1.0), &data, (0.1, 1.0), MleOptions::default()).is_err());
    }

    #[test]
    fn constant_runs_are_degenerate() {
        let pts: Vec<Point2> = (0..6).map(|i| Point2::new(0.3 * i as f64, 0.2 * i as f64)).collect();
        let data = TrainingSet::new(pts, vec![1.5; 6]).unwrap();
        let err = estimate_theta_mle(&prior(1.0), &data, (0.1, 10.0), MleOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn golden_section_finds_the_scan_optimum_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point2> = (0..20)
            .map(|_| Point2::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect();
        let vals: Vec<f64> = pts.iter().map(|p| (2.0 * p.x).sin() + p.y * p.y).collect();
        let data = TrainingSet::new(pts.clone(), vals.clone()).unwrap();
        let r = estimate_theta_mle(&prior(1.0), &data, (0.05, 5.0), MleOptions::default()).unwrap();
        // No scan point beats the refined optimum.
        for i in 0..60 {
            let t = 0.05 * (100f64).powf(i as f64 / 59.0);
            if let Ok((l, _)) = profile_log_likelihood(&prior(1.0), &pts, &vals, r.mean, t) {
                assert!(l <= r.log_likelihood + 1e-8, "theta {t}: {l} > {}", r.log_likelihood);
            }
        }
    }
}
