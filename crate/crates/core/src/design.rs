//! Sequential design: greedy minimum mean variance, fault-straddling pairs,
//! ghost points and the upper-credible-interval region.
//!
//! Scoring needs no run values: adding a point at `c` lowers the variance at
//! `g` by `cov(g, c)^2 / (var(c) + tau)`, where all moments are conditional on
//! the points already in the design and `tau` is the nugget.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSurface;
use crate::emulator::{factor_with_nugget, AdjustedEmulator, Feature, PriorSpec};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Polyline, Segment};

/// Candidates whose scores are within this relative margin of the best tie,
/// and the lowest index wins.
pub const TIE_REL_TOL: f64 = 1e-12;
pub const DEFAULT_NN_K: usize = 12;

#[derive(Debug, Clone, Default)]
pub struct DesignState {
    pub candidates: Vec<Point2>,
    /// Points already in the design, in order (earlier waves, straddles,
    /// then greedy picks).
    pub selected: Vec<Point2>,
    /// Zero-valued pseudo-runs that condition the design.
    pub ghosts: Vec<Point2>,
    /// Truncate candidate scoring to this many nearest design points.
    pub nn_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignStep {
    pub candidate: usize,
    pub point: Point2,
    /// Mean adjusted variance over the evaluation grid after this pick.
    pub mean_variance: f64,
}

impl DesignState {
    pub fn new(candidates: Vec<Point2>) -> Self {
        DesignState {
            candidates,
            ..Default::default()
        }
    }

    fn conditioning(&self) -> Vec<Point2> {
        self.ghosts.iter().chain(&self.selected).copied().collect()
    }
}

/// Incrementally conditioned moments over grid and candidates.
struct Scorer {
    tau: f64,
    s2: f64,
    var_g: DVector<f64>,
    cov_gc: DMatrix<f64>,
    cov_cc: DMatrix<f64>,
    nn: Option<NnCache>,
}

/// Prior covariances needed for nearest-neighbour scoring.
struct NnCache {
    k: usize,
    positions: Vec<nalgebra::Vector3<f64>>,
    cand_positions: Vec<nalgebra::Vector3<f64>>,
    k_gs: Vec<DVector<f64>>,
    k_sc: Vec<DVector<f64>>,
    k_gc: DMatrix<f64>,
    k_ss: DMatrix<f64>,
}

impl Scorer {
    fn new(prior: &PriorSpec, cond: &[Feature], grid: &[Feature], cands: &[Feature], nn_k: Option<usize>) -> Result<Self> {
        let kern = &prior.kernel;
        let s2 = prior.variance();
        let k_gc = kern.cross_corr(grid, cands)? * s2;
        let k_cc = kern.corr_matrix(cands)? * s2;
        let mut tau = prior.nugget * s2;
        let (mut var_g, mut cov_gc, mut cov_cc) = (DVector::from_element(grid.len(), s2), k_gc.clone(), k_cc);
        let mut nn = None;
        if !cond.is_empty() {
            let corr_s = kern.corr_matrix(cond)?;
            let (chol, nug) = factor_with_nugget(&corr_s, s2, prior.nugget)?;
            tau = nug * s2;
            let k_sg = kern.cross_corr(cond, grid)? * s2;
            let k_sc = kern.cross_corr(cond, cands)? * s2;
            let l = chol.l_dirty();
            let w_g = l.solve_lower_triangular(&k_sg).ok_or_else(|| Error::Factorization("triangular solve".into()))?;
            let w_c = l.solve_lower_triangular(&k_sc).ok_or_else(|| Error::Factorization("triangular solve".into()))?;
            cov_gc -= w_g.transpose() * &w_c;
            cov_cc -= w_c.transpose() * &w_c;
            for (g, col) in w_g.column_iter().enumerate() {
                var_g[g] -= col.norm_squared();
            }
            if let Some(k) = nn_k {
                nn = Some(NnCache {
                    k,
                    positions: cond.iter().map(Feature::position).collect(),
                    cand_positions: cands.iter().map(Feature::position).collect(),
                    k_gs: k_sg.row_iter().map(|r| r.transpose()).collect(),
                    k_sc: k_sc.row_iter().map(|r| r.transpose()).collect(),
                    k_gc,
                    k_ss: corr_s * s2,
                });
            }
        } else if let Some(k) = nn_k {
            nn = Some(NnCache {
                k,
                positions: Vec::new(),
                cand_positions: cands.iter().map(Feature::position).collect(),
                k_gs: Vec::new(),
                k_sc: Vec::new(),
                k_gc,
                k_ss: DMatrix::zeros(0, 0),
            });
        }
        Ok(Scorer {
            tau,
            s2,
            var_g,
            cov_gc,
            cov_cc,
            nn,
        })
    }

    fn mean_variance(&self) -> f64 {
        self.var_g.mean()
    }

    fn exact_score(&self, c: usize) -> f64 {
        let d = self.cov_cc[(c, c)] + self.tau;
        let col = self.cov_gc.column(c);
        let reduction: f64 = if d > 0.0 { col.iter().map(|v| v * v).sum::<f64>() / d } else { 0.0 };
        (self.var_g.sum() - reduction) / self.var_g.len() as f64
    }

    /// Score with the candidate's conditional moments computed from its `k`
    /// nearest design points only.
    fn nn_score(&self, nn: &NnCache, c: usize) -> Result<f64> {
        let pc = nn.cand_positions[c];
        let mut order: Vec<usize> = (0..nn.positions.len()).collect();
        order.sort_by(|&a, &b| (nn.positions[a] - pc).norm_squared().total_cmp(&(nn.positions[b] - pc).norm_squared()).then(a.cmp(&b)));
        order.truncate(nn.k);
        let m = order.len();
        let mut kn = DMatrix::from_fn(m, m, |i, j| nn.k_ss[(order[i], order[j])]);
        for i in 0..m {
            kn[(i, i)] += self.tau;
        }
        let chol = Cholesky::new(kn).ok_or_else(|| Error::Factorization("neighbour covariance".into()))?;
        let k_nc = DVector::from_fn(m, |i, _| nn.k_sc[order[i]][c]);
        let a = chol.solve(&k_nc);
        let var_c = self.s2 - k_nc.dot(&a);
        let d = var_c + self.tau;
        let ng = self.var_g.len();
        let mut reduction = 0.0;
        if d > 0.0 {
            for g in 0..ng {
                let kg: f64 = (0..m).map(|i| nn.k_gs[order[i]][g] * a[i]).sum();
                let cov = nn.k_gc[(g, c)] - kg;
                reduction += cov * cov;
            }
            reduction /= d;
        }
        Ok((self.var_g.sum() - reduction) / ng as f64)
    }

    fn scores(&self, open: &[usize]) -> Result<Vec<f64>> {
        match &self.nn {
            Some(nn) if nn.k < nn.positions.len() => open.par_iter().map(|&c| self.nn_score(nn, c)).collect(),
            _ => Ok(open.par_iter().map(|&c| self.exact_score(c)).collect()),
        }
    }

    fn add(&mut self, s: usize, feature: &Feature, prior: &PriorSpec, grid: &[Feature], cands: &[Feature]) -> Result<()> {
        let d = self.cov_cc[(s, s)] + self.tau;
        if !(d > 0.0) {
            return Err(Error::Degenerate("selected candidate has no conditional variance".into()));
        }
        let u_g = self.cov_gc.column(s).into_owned();
        let u_c = self.cov_cc.column(s).into_owned();
        self.cov_gc -= &u_g * u_c.transpose() / d;
        self.cov_cc -= &u_c * u_c.transpose() / d;
        for g in 0..u_g.len() {
            self.var_g[g] -= u_g[g] * u_g[g] / d;
        }
        if let Some(nn) = &mut self.nn {
            let kern = &prior.kernel;
            let one = std::slice::from_ref(feature);
            let k_g = kern.cross_corr(grid, one)?.column(0) * self.s2;
            let k_c = kern.cross_corr(cands, one)?.column(0) * self.s2;
            let n = nn.positions.len();
            let mut k_ss = DMatrix::zeros(n + 1, n + 1);
            k_ss.view_mut((0, 0), (n, n)).copy_from(&nn.k_ss);
            for i in 0..n {
                let v = nn.k_sc[i][s];
                k_ss[(i, n)] = v;
                k_ss[(n, i)] = v;
            }
            k_ss[(n, n)] = self.s2;
            nn.k_ss = k_ss;
            nn.k_gs.push(k_g);
            nn.k_sc.push(k_c);
            nn.positions.push(feature.position());
        }
        Ok(())
    }
}

fn argmin_lowest_index(scores: &[f64]) -> Option<usize> {
    let best = scores.iter().copied().filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let cutoff = best + TIE_REL_TOL * best.abs();
    scores.iter().position(|&s| s <= cutoff)
}

/// Scores (mean variance over `eval_grid` after adding the candidate) for
/// every candidate, given the current design. Candidates already in the
/// design score `NaN`.
pub fn candidate_scores(prior: &PriorSpec, state: &DesignState, eval_grid: &[Point2]) -> Result<Vec<f64>> {
    let cond = state.conditioning();
    let kern = &prior.kernel;
    let scorer = Scorer::new(prior, &kern.features(&cond)?, &kern.features(eval_grid)?, &kern.features(&state.candidates)?, state.nn_k)?;
    let open: Vec<usize> = (0..state.candidates.len()).filter(|&c| !cond.contains(&state.candidates[c])).collect();
    let s = scorer.scores(&open)?;
    let mut out = vec![f64::NAN; state.candidates.len()];
    for (i, &c) in open.iter().enumerate() {
        out[c] = s[i];
    }
    Ok(out)
}

/// Greedily add `budget` candidates, each minimizing the mean adjusted
/// variance over `eval_grid`. Picks are appended to `state.selected`.
pub fn sequential_design(prior: &PriorSpec, state: &mut DesignState, eval_grid: &[Point2], budget: usize) -> Result<Vec<DesignStep>> {
    prior.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParameter("design budget must be at least 1".into()));
    }
    if state.candidates.is_empty() || eval_grid.is_empty() {
        return Err(Error::InvalidParameter("design needs candidates and an evaluation grid".into()));
    }
    if state.nn_k == Some(0) {
        return Err(Error::InvalidParameter("nn_k must be at least 1".into()));
    }
    let cond = state.conditioning();
    let mut open: Vec<usize> = (0..state.candidates.len()).filter(|&c| !cond.contains(&state.candidates[c])).collect();
    if budget > open.len() {
        return Err(Error::InvalidParameter(format!(
            "budget {budget} exceeds the {} available candidates",
            open.len()
        )));
    }
    let kern = &prior.kernel;
    let grid_f = kern.features(eval_grid)?;
    let cand_f = kern.features(&state.candidates)?;
    let mut scorer = Scorer::new(prior, &kern.features(&cond)?, &grid_f, &cand_f, state.nn_k)?;
    let mut steps = Vec::with_capacity(budget);
    for _ in 0..budget {
        let scores = scorer.scores(&open)?;
        let pos = argmin_lowest_index(&scores).ok_or_else(|| Error::NonFinite("no finite candidate score".into()))?;
        let c = open.remove(pos);
        scorer.add(c, &cand_f[c], prior, &grid_f, &cand_f)?;
        let point = state.candidates[c];
        state.selected.push(point);
        steps.push(DesignStep {
            candidate: c,
            point,
            mean_variance: scorer.mean_variance(),
        });
    }
    Ok(steps)
}

/// Mean adjusted variance over `grid` given design `points` (values unused).
pub fn mean_variance(prior: &PriorSpec, points: &[Point2], grid: &[Point2]) -> Result<f64> {
    let data = crate::emulator::TrainingSet::new(points.to_vec(), vec![0.0; points.len()])?;
    let em = AdjustedEmulator::build(prior.clone(), data)?;
    let v = em.predict(grid)?;
    Ok(v.iter().map(|(_, v)| v).sum::<f64>() / grid.len() as f64)
}

/// A location along a fault where a straddling pair is wanted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraddleRequest {
    pub fault: Segment,
    pub x: f64,
}

/// For each request, the points `offset` above and below the fault at `x`.
pub fn straddle_pairs(surface: &EmbeddingSurface, requests: &[StraddleRequest], offset: f64) -> Result<Vec<(Point2, Point2)>> {
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::InvalidParameter(format!("straddle offset must be positive, got {offset}")));
    }
    requests
        .iter()
        .map(|r| {
            let y = r.fault.y_at(r.x).ok_or_else(|| {
                Error::InvalidParameter(format!("x = {} is outside the span of the fault", r.x))
            })?;
            let above = Point2::new(r.x, y + offset);
            let below = Point2::new(r.x, y - offset);
            if surface.region_of(above)? == surface.region_of(below)? {
                return Err(Error::InvalidParameter(format!(
                    "straddle pair at x = {} with offset {offset} does not cross a tear",
                    r.x
                )));
            }
            Ok((above, below))
        })
        .collect()
}

/// `count` points evenly spaced along `boundary`. Closed boundaries are
/// split into `count` equal arcs; open ones include both end points.
pub fn ghost_points(boundary: &Polyline, count: usize) -> Result<Vec<Point2>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let len = boundary.length();
    if boundary.vertices.len() < 2 || !(len > 0.0) || !len.is_finite() {
        return Err(Error::Degenerate("ghost boundary has no length".into()));
    }
    let step = match (boundary.closed, count) {
        (true, _) => len / count as f64,
        (false, 1) => 0.0,
        (false, _) => len / (count - 1) as f64,
    };
    Ok((0..count).map(|i| boundary.point_at(step * i as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UciSpec {
    pub c: f64,
    pub delta: f64,
    pub f_plus: f64,
}

impl UciSpec {
    pub fn new(c: f64, delta: f64, f_plus: f64) -> Result<Self> {
        if !(c > 0.0) || !(delta >= 0.0) || !f_plus.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "UCI needs c > 0, delta >= 0 and finite f+, got c={c} delta={delta} f+={f_plus}"
            )));
        }
        Ok(UciSpec { c, delta, f_plus })
    }
}

/// Membership of each grid point in `{x : E + c sd > f+ - delta}`.
pub fn uci_region(em: &AdjustedEmulator, grid: &[Point2], uci: &UciSpec) -> Result<Vec<bool>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("UCI grid is empty".into()));
    }
    let threshold = uci.f_plus - uci.delta;
    Ok(em
        .predict(grid)?
        .into_iter()
        .map(|(m, v)| m + uci.c * v.sqrt() > threshold)
        .collect())
}
