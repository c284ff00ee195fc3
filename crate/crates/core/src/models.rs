//! Fully specified test functions, their torn embedding surfaces, the
//! Olympus-style fault surface, and the NPV utility.
//!
//! Each toy function and its surface share one region map, so the jumps of
//! `f` and the tears of `v` sit in the same place by construction.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSurface, Planar, RegionId, SurfaceShape};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point2, Polyline, Segment};

pub const TOY_DOMAIN: Domain = Domain {
    x: (0.0, 2.0),
    y: (0.0, 2.0),
};

pub const CURVED_DOMAIN: Domain = Domain {
    x: (-1.0, 1.0),
    y: (-1.0, 1.0),
};

/// Toy 1: one tear along `y = 1` for `x > 0.75`.
pub const TOY1_TEAR_Y: f64 = 1.0;
pub const TOY1_TEAR_X: f64 = 0.75;

/// Toy 2: tears along `y = 0.75` for `x > 0.6` and `y = 1.25` for `x > 1`.
pub const TOY2_LOWER: (f64, f64) = (0.6, 0.75);
pub const TOY2_UPPER: (f64, f64) = (1.0, 1.25);

/// Curved toy: inner disc radius and the four circle centres a, b, c, d.
pub const CURVED_INNER_RADIUS: f64 = 0.4;
pub const CURVED_CENTRES: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];

pub const OLYMPUS_Y_DIS: [f64; 5] = [73.5, 85.5, 99.5, 103.5, 123.5];
pub const OLYMPUS_X_DIS: [f64; 5] = [94.0, 52.0, 64.0, 87.0, 0.0];
pub const OLYMPUS_X_MAX: f64 = 118.0;
pub const OLYMPUS_Y_MAX: f64 = 140.0;

pub const OLYMPUS_DOMAIN: Domain = Domain {
    x: (0.0, OLYMPUS_X_MAX),
    y: (0.0, OLYMPUS_Y_MAX),
};

fn smooth_part(p: Point2) -> f64 {
    0.4 * (5.0 * p.x).sin() + 0.4 * (5.0 * p.y).cos()
}

fn ramp_sq(x: f64, from: f64) -> f64 {
    if x > from {
        (x - from).powi(2)
    } else {
        0.0
    }
}

fn ramp_lin(x: f64, from: f64) -> f64 {
    if x > from {
        x - from
    } else {
        0.0
    }
}

/// Band index for half-open bands `[edges[i-1], edges[i])`.
fn band(y: f64, edges: &[f64]) -> RegionId {
    edges.iter().take_while(|&&e| y >= e).count() as RegionId
}

#[derive(Debug, Clone, Copy)]
pub struct Toy1Surface;

impl SurfaceShape for Toy1Surface {
    fn name(&self) -> &str {
        "toy1"
    }

    fn domain(&self) -> Domain {
        TOY_DOMAIN
    }

    fn region_of(&self, p: Point2) -> RegionId {
        band(p.y, &[TOY1_TEAR_Y])
    }

    fn value_in(&self, region: RegionId, p: Point2) -> f64 {
        -0.4 * region_sign(region) * ramp_sq(p.x, TOY1_TEAR_X)
    }

    fn gradient_in(&self, region: RegionId, p: Point2) -> Option<(f64, f64)> {
        Some((-0.8 * region_sign(region) * ramp_lin(p.x, TOY1_TEAR_X), 0.0))
    }

    fn tear_lines(&self) -> Vec<Polyline> {
        vec![Polyline::new(
            vec![Point2::new(TOY1_TEAR_X, TOY1_TEAR_Y), Point2::new(TOY_DOMAIN.x.1, TOY1_TEAR_Y)],
            false,
        )]
    }
}

/// `sign(y - 1)` with the tear itself counted on the upper side.
fn region_sign(region: RegionId) -> f64 {
    if region == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Line through the two interior tear end points of toy 2.
pub fn toy2_b(y: f64) -> f64 {
    let (x0, y0) = TOY2_LOWER;
    let (x1, y1) = TOY2_UPPER;
    x0 + (x1 - x0) * (y - y0) / (y1 - y0)
}

#[derive(Debug, Clone, Copy)]
pub struct Toy2Surface;

impl SurfaceShape for Toy2Surface {
    fn name(&self) -> &str {
        "toy2"
    }

    fn domain(&self) -> Domain {
        TOY_DOMAIN
    }

    fn region_of(&self, p: Point2) -> RegionId {
        band(p.y, &[TOY2_LOWER.1, TOY2_UPPER.1])
    }

    fn value_in(&self, region: RegionId, p: Point2) -> f64 {
        match region {
            0 => -0.6 * ramp_sq(p.x, TOY2_LOWER.0),
            1 => 0.6 * ramp_sq(p.x, toy2_b(p.y)),
            _ => 0.0,
        }
    }

    fn gradient_in(&self, region: RegionId, p: Point2) -> Option<(f64, f64)> {
        let slope = (TOY2_UPPER.0 - TOY2_LOWER.0) / (TOY2_UPPER.1 - TOY2_LOWER.1);
        Some(match region {
            0 => (-1.2 * ramp_lin(p.x, TOY2_LOWER.0), 0.0),
            1 => {
                let u = ramp_lin(p.x, toy2_b(p.y));
                (1.2 * u, -1.2 * u * slope)
            }
            _ => (0.0, 0.0),
        })
    }

    fn tear_lines(&self) -> Vec<Polyline> {
        [TOY2_LOWER, TOY2_UPPER]
            .iter()
            .map(|&(x, y)| Polyline::new(vec![Point2::new(x, y), Point2::new(TOY_DOMAIN.x.1, y)], false))
            .collect()
    }
}

/// Region identifier of the curved toy: 0 inside the inner disc, otherwise
/// 1..4 from the circle intersections. Ties on circle boundaries resolve to
/// the region that is outside the tied circle; the corners, where no rule
/// applies, go to the nearest centre.
pub fn curved_region(p: Point2) -> RegionId {
    if p.x.hypot(p.y) < CURVED_INNER_RADIUS {
        return 0;
    }
    let d2: Vec<f64> = CURVED_CENTRES
        .iter()
        .map(|&(cx, cy)| (p.x - cx).powi(2) + (p.y - cy).powi(2))
        .collect();
    for k in 0..4 {
        if d2[k] < 1.0 && d2[(k + 1) % 4] >= 1.0 {
            return k as RegionId + 1;
        }
    }
    let nearest = (0..4).min_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap_or(0);
    nearest as RegionId + 1
}

#[derive(Debug, Clone, Copy)]
pub struct CurvedSurface;

impl SurfaceShape for CurvedSurface {
    fn name(&self) -> &str {
        "toy3"
    }

    fn domain(&self) -> Domain {
        CURVED_DOMAIN
    }

    fn region_of(&self, p: Point2) -> RegionId {
        curved_region(p)
    }

    fn value_in(&self, region: RegionId, p: Point2) -> f64 {
        match region {
            1 | 3 => 0.5 * (region - 2) as f64 * (p.x.hypot(p.y) - CURVED_INNER_RADIUS).powi(2),
            _ => 0.0,
        }
    }

    fn gradient_in(&self, region: RegionId, p: Point2) -> Option<(f64, f64)> {
        match region {
            1 | 3 => {
                let r = p.x.hypot(p.y);
                let s = (region - 2) as f64 * (r - CURVED_INNER_RADIUS) / r;
                Some((s * p.x, s * p.y))
            }
            _ => Some((0.0, 0.0)),
        }
    }

    fn tear_lines(&self) -> Vec<Polyline> {
        curved_tears(64)
    }
}

/// The four circular arcs along which the curved toy jumps, each running
/// from the inner disc out to a corner of the domain.
pub fn curved_tears(samples: usize) -> Vec<Polyline> {
    let r0 = CURVED_INNER_RADIUS;
    // On the circle centred (0, 1): p = (sin t, 1 - cos t), |p|^2 = 2 (1 - cos t).
    let t0 = (1.0 - 0.5 * r0 * r0).acos();
    let n = samples.max(2);
    let base: Vec<Point2> = (0..n)
        .map(|i| {
            let t = t0 + (FRAC_PI_2 - t0) * i as f64 / (n - 1) as f64;
            Point2::new(t.sin(), 1.0 - t.cos())
        })
        .collect();
    (0..4)
        .map(|quarter| {
            let verts = base
                .iter()
                .map(|&p| (0..quarter).fold(p, |q, _| Point2::new(-q.y, q.x)))
                .collect();
            Polyline::new(verts, false)
        })
        .collect()
}

pub fn olympus_b1(y: f64) -> f64 {
    let (y1, y2) = (OLYMPUS_Y_DIS[0], OLYMPUS_Y_DIS[1]);
    OLYMPUS_X_DIS[0] + (y - y1) / (y2 - y1) * (OLYMPUS_X_DIS[1] - OLYMPUS_X_DIS[0])
}

pub fn olympus_b2(y: f64) -> f64 {
    let (y2, y3) = (OLYMPUS_Y_DIS[1], OLYMPUS_Y_DIS[2]);
    OLYMPUS_X_DIS[1] + (y - y2) / (y3 - y2) * (OLYMPUS_X_DIS[2] - OLYMPUS_X_DIS[1])
}

/// The five faults, each running from its left end point to `x_max`.
pub fn olympus_faults() -> Vec<Segment> {
    OLYMPUS_Y_DIS
        .iter()
        .zip(OLYMPUS_X_DIS)
        .map(|(&y, x)| Segment::new(Point2::new(x, y), Point2::new(OLYMPUS_X_MAX, y)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct OlympusSurface;

impl OlympusSurface {
    /// `scale * ((x - b) / (x_max - b))^2` for `x > b`, with its gradient
    /// given `db/dy`.
    fn scaled(scale: f64, b: f64, db_dy: f64, x: f64) -> (f64, (f64, f64)) {
        if x <= b {
            return (0.0, (0.0, 0.0));
        }
        let w = OLYMPUS_X_MAX - b;
        let u = (x - b) / w;
        let du_db = (x - OLYMPUS_X_MAX) / (w * w);
        (scale * u * u, (2.0 * scale * u / w, 2.0 * scale * u * du_db * db_dy))
    }

    fn eval(region: RegionId, p: Point2) -> (f64, (f64, f64)) {
        let db1 = (OLYMPUS_X_DIS[1] - OLYMPUS_X_DIS[0]) / (OLYMPUS_Y_DIS[1] - OLYMPUS_Y_DIS[0]);
        let db2 = (OLYMPUS_X_DIS[2] - OLYMPUS_X_DIS[1]) / (OLYMPUS_Y_DIS[2] - OLYMPUS_Y_DIS[1]);
        match region {
            0 => Self::scaled(1.0, OLYMPUS_X_DIS[0], 0.0, p.x),
            1 => Self::scaled(-1.2, olympus_b1(p.y), db1, p.x),
            2 => Self::scaled(3.0, olympus_b2(p.y), db2, p.x),
            3 => (0.0, (0.0, 0.0)),
            4 => Self::scaled(-2.0, OLYMPUS_X_DIS[3], 0.0, p.x),
            _ => (1.0, (0.0, 0.0)),
        }
    }
}

impl SurfaceShape for OlympusSurface {
    fn name(&self) -> &str {
        "olympus"
    }

    fn domain(&self) -> Domain {
        OLYMPUS_DOMAIN
    }

    fn region_of(&self, p: Point2) -> RegionId {
        band(p.y, &OLYMPUS_Y_DIS)
    }

    fn value_in(&self, region: RegionId, p: Point2) -> f64 {
        Self::eval(region, p).0
    }

    fn gradient_in(&self, region: RegionId, p: Point2) -> Option<(f64, f64)> {
        Some(Self::eval(region, p).1)
    }

    fn tear_lines(&self) -> Vec<Polyline> {
        olympus_faults()
            .into_iter()
            .map(|s| Polyline::new(vec![s.start, s.end], false))
            .collect()
    }
}

/// Names accepted by [`builtin_embedding`].
pub const SURFACE_NAMES: [&str; 7] = ["toy1", "toy2", "toy3", "curved", "olympus", "planar", "flat"];

/// Gradient of the built-in `planar` surface.
pub const PLANAR_GRADIENT: (f64, f64) = (0.7, -1.3);

pub fn builtin_embedding(name: &str) -> Result<EmbeddingSurface> {
    Ok(match name {
        "toy1" => EmbeddingSurface::new(Toy1Surface),
        "toy2" => EmbeddingSurface::new(Toy2Surface),
        "toy3" | "curved" => EmbeddingSurface::new(CurvedSurface),
        "olympus" => EmbeddingSurface::new(OlympusSurface),
        "planar" => EmbeddingSurface::new(Planar::new(PLANAR_GRADIENT.0, PLANAR_GRADIENT.1, TOY_DOMAIN)),
        "flat" => EmbeddingSurface::new(Planar::flat(TOY_DOMAIN)),
        other => return Err(Error::UnknownName(other.to_string())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestFunction {
    Toy1,
    Toy2TwoRift,
    Toy3Curved,
    /// Toy 1 without its jump term.
    SmoothNoJump,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [
        TestFunction::Toy1,
        TestFunction::Toy2TwoRift,
        TestFunction::Toy3Curved,
        TestFunction::SmoothNoJump,
    ];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "toy1" => Ok(TestFunction::Toy1),
            "toy2" => Ok(TestFunction::Toy2TwoRift),
            "toy3" | "curved" => Ok(TestFunction::Toy3Curved),
            "smooth" => Ok(TestFunction::SmoothNoJump),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Toy1 => "toy1",
            TestFunction::Toy2TwoRift => "toy2",
            TestFunction::Toy3Curved => "toy3",
            TestFunction::SmoothNoJump => "smooth",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            TestFunction::Toy3Curved => CURVED_DOMAIN,
            _ => TOY_DOMAIN,
        }
    }

    /// The matching torn embedding (flat for the smooth function).
    pub fn embedding(&self) -> EmbeddingSurface {
        match self {
            TestFunction::Toy1 => EmbeddingSurface::new(Toy1Surface),
            TestFunction::Toy2TwoRift => EmbeddingSurface::new(Toy2Surface),
            TestFunction::Toy3Curved => EmbeddingSurface::new(CurvedSurface),
            TestFunction::SmoothNoJump => EmbeddingSurface::new(Planar::flat(TOY_DOMAIN)),
        }
    }

    pub fn region(&self, p: Point2) -> Result<RegionId> {
        self.embedding().region_of(p)
    }

    pub fn eval(&self, p: Point2) -> Result<f64> {
        self.domain().check(p)?;
        Ok(match self {
            TestFunction::Toy1 => {
                let r = Toy1Surface.region_of(p);
                smooth_part(p) + 0.8 * region_sign(r) * ramp_sq(p.x, TOY1_TEAR_X)
            }
            TestFunction::Toy2TwoRift => {
                let jump = match Toy2Surface.region_of(p) {
                    0 => -0.6 * ramp_sq(p.x, TOY2_LOWER.0),
                    1 => 0.0,
                    _ => 1.2 * ramp_sq(p.x, TOY2_UPPER.0),
                };
                smooth_part(p) + jump
            }
            TestFunction::Toy3Curved => {
                let m = curved_region(p);
                let base = 0.5 * ((3.0 * p.x).sin() + (3.5 * p.y).cos());
                if m > 0 {
                    let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                    base + sign * (p.x.hypot(p.y) - CURVED_INNER_RADIUS).powi(2)
                } else {
                    base
                }
            }
            TestFunction::SmoothNoJump => smooth_part(p),
        })
    }
}

pub fn eval_test_function(name: &str, p: Point2) -> Result<f64> {
    TestFunction::from_name(name)?.eval(p)
}

/// Region label for a test function or a built-in surface.
pub fn region_id(name: &str, p: Point2) -> Result<RegionId> {
    match TestFunction::from_name(name) {
        Ok(f) => f.region(p),
        Err(_) => builtin_embedding(name)?.region_of(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpvParams {
    /// Discount rate per period, as a fraction.
    pub d: f64,
    /// Discount period, in the same units as `times`.
    pub tau: f64,
    pub times: Vec<f64>,
    pub profits: Vec<f64>,
}

/// `sum_i R(t_i) / (1 + d)^(t_i / tau)`.
pub fn npv(params: &NpvParams) -> Result<f64> {
    if params.times.len() != params.profits.len() {
        return Err(Error::DimensionMismatch {
            expected: params.times.len(),
            got: params.profits.len(),
        });
    }
    if !(params.tau > 0.0) || !(params.d >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need tau > 0 and d >= 0, got tau={} d={}",
            params.tau, params.d
        )));
    }
    let base = 1.0 + params.d;
    Ok(params
        .times
        .iter()
        .zip(&params.profits)
        .map(|(t, r)| r / base.powf(t / params.tau))
        .sum())
}

/// `r` noisy copies of `f(p)`; a stand-in for replicate simulator outputs.
pub fn synthetic_replicates(f: TestFunction, p: Point2, r: usize, noise_sd: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    replicates_with(f, p, r, noise_sd, &mut rng)
}

/// Replicates at many points from one seeded stream, one row per point.
pub fn synthetic_replicate_matrix(
    f: TestFunction,
    points: &[Point2],
    r: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points
        .iter()
        .map(|&p| replicates_with(f, p, r, noise_sd, &mut rng))
        .collect()
}

fn replicates_with(f: TestFunction, p: Point2, r: usize, noise_sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let fx = f.eval(p)?;
    if noise_sd == 0.0 {
        return Ok(vec![fx; r]);
    }
    let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..r).map(|_| fx + normal.sample(rng)).collect())
}
