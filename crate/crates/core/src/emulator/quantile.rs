//! Emulators of replicate statistics: quantiles, the mean and the SD.

use serde::{Deserialize, Serialize};

use super::{estimate_theta_mle, AdjustedEmulator, MleOptions, PriorSpec, TrainingSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileTarget {
    Quantile(f64),
    Mean,
    Sd,
}

/// Quantile with linear interpolation between order statistics
/// (position `(R - 1) p` in the sorted sample).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// One emulator per target. Each target series gets its own prior mean and
/// SD (the series sample mean and SD, or the template SD when the series is
/// constant); correlation parameters are shared unless `refit` supplies a
/// bracket for a per-target likelihood fit of theta.
pub fn quantile_emulate(
    template: &PriorSpec,
    points: &[Point2],
    replicates: &[Vec<f64>],
    targets: &[QuantileTarget],
    refit: Option<(f64, f64)>,
) -> Result<Vec<(QuantileTarget, AdjustedEmulator)>> {
    if replicates.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: replicates.len(),
        });
    }
    let r = replicates.first().map_or(0, Vec::len);
    if r < 2 || replicates.iter().any(|row| row.len() != r) {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates per point, all rows equal length (got {r})"
        )));
    }
    for t in targets {
        if let QuantileTarget::Quantile(p) = t {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::InvalidParameter(format!("quantile must lie in (0, 1), got {p}")));
            }
        }
    }
    let sorted: Vec<Vec<f64>> = replicates
        .iter()
        .map(|row| {
            let mut s = row.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    targets
        .iter()
        .map(|&t| {
            let series: Vec<f64> = sorted
                .iter()
                .map(|s| match t {
                    QuantileTarget::Quantile(p) => empirical_quantile(s, p),
                    QuantileTarget::Mean => mean_sd(s).0,
                    QuantileTarget::Sd => mean_sd(s).1,
                })
                .collect();
            let (m, sd) = mean_sd(&series);
            let mut prior = template.clone();
            prior.mean = m;
            if sd > 1e-12 * m.abs().max(1.0) {
                prior.sigma = sd;
            }
            let data = TrainingSet::new(points.to_vec(), series)?;
            if let Some(bounds) = refit {
                let fit = estimate_theta_mle(&prior, &data, bounds, MleOptions::default())?;
                prior.kernel = prior.kernel.with_theta(fit.theta)?;
            }
            Ok((t, AdjustedEmulator::build(prior, data)?))
        })
        .collect()
}
