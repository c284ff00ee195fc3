//! Torn embedding surfaces `v(x, y)` and the local 3x3 metric built on them.
//!
//! A surface is split into regions, each carrying a smooth formula. Tears
//! are simply region boundaries across which the formulas disagree, so
//! gradients are only ever differenced inside one region.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point2, Polyline};

pub type RegionId = i32;

/// Relative finite-difference step (per axis, times the domain extent).
pub const FD_RELATIVE_STEP: f64 = 1e-5;

/// Below this squared gradient norm the canonical basis is used.
pub const DEGENERATE_GRADIENT_SQ: f64 = 1e-12;

/// A region-aware scalar surface over a rectangular domain.
///
/// `region_of` must be total on the domain. `value_in` is only ever called
/// with the region that `region_of` reports for the point (or for points
/// already checked to share it).
pub trait SurfaceShape: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn domain(&self) -> Domain;
    fn region_of(&self, p: Point2) -> RegionId;
    fn value_in(&self, region: RegionId, p: Point2) -> f64;

    /// Analytic `(v_x, v_y)`, when the shape has one.
    fn gradient_in(&self, _region: RegionId, _p: Point2) -> Option<(f64, f64)> {
        None
    }

    /// Tear lines, for design and reporting only.
    fn tear_lines(&self) -> Vec<Polyline> {
        Vec::new()
    }
}

#[derive(Clone)]
pub struct EmbeddingSurface {
    shape: Arc<dyn SurfaceShape>,
    step: (f64, f64),
}

impl fmt::Debug for EmbeddingSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingSurface")
            .field("name", &self.shape.name())
            .field("domain", &self.shape.domain())
            .finish()
    }
}

impl EmbeddingSurface {
    pub fn new<S: SurfaceShape + 'static>(shape: S) -> Self {
        Self::from_arc(Arc::new(shape))
    }

    pub fn from_arc(shape: Arc<dyn SurfaceShape>) -> Self {
        let d = shape.domain();
        EmbeddingSurface {
            shape,
            step: (FD_RELATIVE_STEP * d.width(), FD_RELATIVE_STEP * d.height()),
        }
    }

    pub fn name(&self) -> &str {
        self.shape.name()
    }

    pub fn domain(&self) -> Domain {
        self.shape.domain()
    }

    pub fn shape(&self) -> &dyn SurfaceShape {
        self.shape.as_ref()
    }

    pub fn tear_lines(&self) -> Vec<Polyline> {
        self.shape.tear_lines()
    }

    /// Whether `p` lies within `tol` of a tear line.
    pub fn on_tear(&self, p: Point2, tol: f64) -> bool {
        self.tear_lines().iter().any(|t| t.distance_to(p) <= tol)
    }

    pub fn region_of(&self, p: Point2) -> Result<RegionId> {
        self.domain().check(p)?;
        Ok(self.shape.region_of(p))
    }

    pub fn value(&self, p: Point2) -> Result<f64> {
        let r = self.region_of(p)?;
        Ok(self.shape.value_in(r, p))
    }

    /// `(x, y, v(x, y))`.
    pub fn embed(&self, p: Point2) -> Result<Vector3<f64>> {
        Ok(Vector3::new(p.x, p.y, self.value(p)?))
    }

    /// Analytic gradient where available, finite differences otherwise.
    pub fn gradient(&self, p: Point2) -> Result<(f64, f64)> {
        let r = self.region_of(p)?;
        match self.shape.gradient_in(r, p) {
            Some(g) => Ok(g),
            None => self.fd_gradient_in(r, p),
        }
    }

    /// Finite-difference gradient, ignoring any analytic form.
    pub fn fd_gradient(&self, p: Point2) -> Result<(f64, f64)> {
        let r = self.region_of(p)?;
        self.fd_gradient_in(r, p)
    }

    fn fd_gradient_in(&self, region: RegionId, p: Point2) -> Result<(f64, f64)> {
        let gx = self.fd_axis(region, p, Point2::new(self.step.0, 0.0), self.step.0)?;
        let gy = self.fd_axis(region, p, Point2::new(0.0, self.step.1), self.step.1)?;
        Ok((gx, gy))
    }

    fn fd_axis(&self, region: RegionId, p: Point2, dir: Point2, h: f64) -> Result<f64> {
        let domain = self.domain();
        let at = |k: f64| Point2::new(p.x + k * dir.x, p.y + k * dir.y);
        let same = |q: Point2| domain.contains(q) && self.shape.region_of(q) == region;
        let v = |q: Point2| self.shape.value_in(region, q);
        let f0 = v(p);
        let (fwd, bwd) = (same(at(1.0)), same(at(-1.0)));
        if fwd && bwd {
            return Ok((v(at(1.0)) - v(at(-1.0))) / (2.0 * h));
        }
        if fwd {
            return Ok(if same(at(2.0)) {
                (-3.0 * f0 + 4.0 * v(at(1.0)) - v(at(2.0))) / (2.0 * h)
            } else {
                (v(at(1.0)) - f0) / h
            });
        }
        if bwd {
            return Ok(if same(at(-2.0)) {
                (3.0 * f0 - 4.0 * v(at(-1.0)) + v(at(-2.0))) / (2.0 * h)
            } else {
                (f0 - v(at(-1.0))) / h
            });
        }
        Err(Error::Degenerate(format!(
            "no finite-difference stencil for ({}, {}) stays in region {region}",
            p.x, p.y
        )))
    }

    pub fn local_metric(&self, p: Point2, theta: f64, alpha3: f64) -> Result<LocalMetric> {
        LocalMetric::from_gradient(self.gradient(p)?, theta, alpha3)
    }
}

/// Orthonormal frame at a surface point: `w1` up the steepest ascent in the
/// tangent plane, `w2` along the level set, `w3` normal to the surface.
pub fn tangent_basis(grad: (f64, f64)) -> [Vector3<f64>; 3] {
    let (vx, vy) = grad;
    let r2 = vx * vx + vy * vy;
    if r2 < DEGENERATE_GRADIENT_SQ {
        return [Vector3::x(), Vector3::y(), Vector3::z()];
    }
    let r = r2.sqrt();
    let (ux, uy) = (vx / r, vy / r);
    let c = (1.0 + r2).sqrt();
    // w1 = (vx, vy, r^2) / (r sqrt(1 + r^2)), written via the unit direction.
    let w1 = Vector3::new(ux / c, uy / c, r / c);
    let w2 = Vector3::new(-uy, ux, 0.0);
    let w3 = Vector3::new(-vx / c, -vy / c, 1.0 / c);
    [w1, w2, w3]
}

/// The position-dependent 3-D metric that undoes the local stretching of the
/// embedding: eigenvalues `theta^2 (1 + r^2)`, `theta^2` in the tangent plane
/// and a free `alpha3^2` along the normal.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMetric {
    pub sigma3d: Matrix3<f64>,
    pub basis: [Vector3<f64>; 3],
    pub eigs: [f64; 3],
    pub grad: (f64, f64),
    pub r_sq: f64,
}

impl LocalMetric {
    pub fn from_gradient(grad: (f64, f64), theta: f64, alpha3: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) || !(alpha3 > 0.0 && alpha3.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta and alpha3 must be positive, got {theta} and {alpha3}"
            )));
        }
        let (vx, vy) = grad;
        if !(vx.is_finite() && vy.is_finite()) {
            return Err(Error::NonFinite(format!("surface gradient ({vx}, {vy})")));
        }
        let r_sq = vx * vx + vy * vy;
        let t2 = theta * theta;
        let a = alpha3 * alpha3 / (1.0 + r_sq);
        let off = t2 - a;
        let sigma3d = Matrix3::new(
            t2 + a * vx * vx,
            a * vx * vy,
            vx * off,
            a * vx * vy,
            t2 + a * vy * vy,
            vy * off,
            vx * off,
            vy * off,
            t2 * r_sq + a,
        );
        Ok(LocalMetric {
            sigma3d,
            basis: tangent_basis(grad),
            eigs: [t2 * (1.0 + r_sq), t2, alpha3 * alpha3],
            grad,
            r_sq,
        })
    }

    /// Closed-form determinant, the product of the eigenvalues.
    pub fn det(&self) -> f64 {
        self.eigs[0] * self.eigs[1] * self.eigs[2]
    }

    /// The tangent-plane lift `A = [[1, 0], [0, 1], [v_x, v_y]]`.
    pub fn lift(&self) -> Matrix3x2<f64> {
        Matrix3x2::new(1.0, 0.0, 0.0, 1.0, self.grad.0, self.grad.1)
    }

    /// `A' sigma3d^-1 A`, which should equal `theta^-2 I`.
    pub fn projected_inverse(&self) -> Result<Matrix2<f64>> {
        let chol = self
            .sigma3d
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("local metric".into()))?;
        let a = self.lift();
        let solved = chol.solve(&a);
        Ok(a.transpose() * solved)
    }
}

/// `v(x, y) = a x + b y`: zero curvature, single region.
#[derive(Debug, Clone)]
pub struct Planar {
    pub a: f64,
    pub b: f64,
    pub domain: Domain,
}

impl Planar {
    pub fn new(a: f64, b: f64, domain: Domain) -> Self {
        Planar { a, b, domain }
    }

    pub fn flat(domain: Domain) -> Self {
        Planar::new(0.0, 0.0, domain)
    }
}

impl SurfaceShape for Planar {
    fn name(&self) -> &str {
        if self.a == 0.0 && self.b == 0.0 {
            "flat"
        } else {
            "planar"
        }
    }

    fn domain(&self) -> Domain {
        self.domain
    }

    fn region_of(&self, _p: Point2) -> RegionId {
        0
    }

    fn value_in(&self, _region: RegionId, p: Point2) -> f64 {
        self.a * p.x + self.b * p.y
    }

    fn gradient_in(&self, _region: RegionId, _p: Point2) -> Option<(f64, f64)> {
        Some((self.a, self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

/// A condition on a point. Intervals are half-open, `lo <= coord < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Interval {
        axis: Axis,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    /// `a x + b y + c <op> 0`
    Linear {
        a: f64,
        b: f64,
        #[serde(default)]
        c: f64,
        op: Comparison,
    },
}

impl Predicate {
    pub fn holds(&self, p: Point2) -> bool {
        match *self {
            Predicate::Interval { axis, lo, hi } => {
                let v = match axis {
                    Axis::X => p.x,
                    Axis::Y => p.y,
                };
                lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v < hi)
            }
            Predicate::Linear { a, b, c, op } => {
                let s = a * p.x + b * p.y + c;
                match op {
                    Comparison::Lt => s < 0.0,
                    Comparison::Le => s <= 0.0,
                    Comparison::Gt => s > 0.0,
                    Comparison::Ge => s >= 0.0,
                }
            }
        }
    }
}

/// `c + x X + y Y + xx X^2 + xy X Y + yy Y^2`
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Quadratic {
    pub c: f64,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Quadratic {
    pub fn eval(&self, p: Point2) -> f64 {
        self.c + self.x * p.x + self.y * p.y + self.xx * p.x * p.x + self.xy * p.x * p.y + self.yy * p.y * p.y
    }

    pub fn gradient(&self, p: Point2) -> (f64, f64) {
        (
            self.x + 2.0 * self.xx * p.x + self.xy * p.y,
            self.y + self.xy * p.x + 2.0 * self.yy * p.y,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticRegion {
    pub id: RegionId,
    #[serde(default)]
    pub when: Vec<Predicate>,
    pub quadratic: Quadratic,
}

/// User-defined surface: the first region whose predicates all hold wins.
/// The last region must have no predicates so the map is total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseQuadratic {
    #[serde(default = "custom_name")]
    pub name: String,
    pub domain: Domain,
    pub regions: Vec<QuadraticRegion>,
    #[serde(default)]
    pub tear_lines: Vec<Polyline>,
}

fn custom_name() -> String {
    "custom".to_string()
}

impl PiecewiseQuadratic {
    pub fn validate(&self) -> Result<()> {
        Domain::new(self.domain.x, self.domain.y)?;
        let Some(last) = self.regions.last() else {
            return Err(Error::InvalidParameter("custom surface has no regions".into()));
        };
        if !last.when.is_empty() {
            return Err(Error::InvalidParameter(
                "the last region of a custom surface must be a catch-all (empty `when`)".into(),
            ));
        }
        let mut ids: Vec<RegionId> = self.regions.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("custom surface region ids must be unique".into()));
        }
        Ok(())
    }

    pub fn into_surface(self) -> Result<EmbeddingSurface> {
        self.validate()?;
        Ok(EmbeddingSurface::new(self))
    }

    fn region(&self, id: RegionId) -> &QuadraticRegion {
        self.regions
            .iter()
            .find(|r| r.id == id)
            .unwrap_or_else(|| self.regions.last().expect("validated non-empty"))
    }
}

impl SurfaceShape for PiecewiseQuadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn domain(&self) -> Domain {
        self.domain
    }

    fn region_of(&self, p: Point2) -> RegionId {
        self.regions
            .iter()
            .find(|r| r.when.iter().all(|w| w.holds(p)))
            .map(|r| r.id)
            .unwrap_or_else(|| self.regions.last().expect("validated non-empty").id)
    }

    fn value_in(&self, region: RegionId, p: Point2) -> f64 {
        self.region(region).quadratic.eval(p)
    }

    fn gradient_in(&self, region: RegionId, p: Point2) -> Option<(f64, f64)> {
        Some(self.region(region).quadratic.gradient(p))
    }

    fn tear_lines(&self) -> Vec<Polyline> {
        self.tear_lines.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn unit_domain() -> Domain {
        Domain::new((0.0, 2.0), (0.0, 2.0)).unwrap()
    }

    #[test]
    fn basis_for_unit_x_gradient() {
        let [w1, w2, w3] = tangent_basis((1.0, 0.0));
        let s = 0.5f64.sqrt();
        assert_relative_eq!(w1, Vector3::new(s, 0.0, s), epsilon = 1e-15);
        assert_relative_eq!(w2, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(w3, Vector3::new(-s, 0.0, s), epsilon = 1e-15);
    }

    #[test]
    fn basis_degenerate_is_canonical() {
        assert_eq!(tangent_basis((0.0, 0.0)), [Vector3::x(), Vector3::y(), Vector3::z()]);
    }

    #[test]
    fn metric_examples() {
        let flat = LocalMetric::from_gradient((0.0, 0.0), 0.7, 0.3).unwrap();
        assert_relative_eq!(flat.sigma3d, Matrix3::from_diagonal(&Vector3::new(0.49, 0.49, 0.09)), epsilon = 1e-15);

        let m = LocalMetric::from_gradient((1.0, 0.0), 1.0, 2.0).unwrap();
        let want = Matrix3::new(3.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 3.0);
        assert_relative_eq!(m.sigma3d, want, epsilon = 1e-14);
        assert_relative_eq!(m.projected_inverse().unwrap(), Matrix2::identity(), epsilon = 1e-14);
    }

    #[test]
    fn metric_rejects_bad_parameters() {
        assert!(LocalMetric::from_gradient((0.0, 0.0), 0.0, 1.0).is_err());
        assert!(LocalMetric::from_gradient((0.0, 0.0), 1.0, -1.0).is_err());
        assert!(LocalMetric::from_gradient((f64::NAN, 0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn planar_gradient_is_exact_under_fd() {
        let s = EmbeddingSurface::new(Planar::new(0.3, -1.7, unit_domain()));
        for p in [Point2::new(1.0, 1.0), Point2::new(0.0, 0.0), Point2::new(2.0, 0.5)] {
            let (gx, gy) = s.fd_gradient(p).unwrap();
            assert!((gx - 0.3).abs() < 1e-8 && (gy + 1.7).abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let s = EmbeddingSurface::new(Planar::flat(unit_domain()));
        assert!(matches!(s.embed(Point2::new(2.5, 1.0)), Err(Error::OutOfDomain { .. })));
    }

    fn step_surface() -> PiecewiseQuadratic {
        // v = 0 below y = 1, v = x^2 above; tear along y = 1.
        serde_json::from_str(
            r#"{
                "name": "step",
                "domain": {"x": [0, 2], "y": [0, 2]},
                "regions": [
                    {"id": 1, "when": [{"kind": "interval", "axis": "y", "lo": 1.0}], "quadratic": {"xx": 1.0}},
                    {"id": 0, "quadratic": {}}
                ],
                "tear_lines": [{"vertices": [{"x": 0, "y": 1}, {"x": 2, "y": 1}]}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn custom_surface_from_json() {
        let s = step_surface().into_surface().unwrap();
        assert_eq!(s.region_of(Point2::new(1.0, 1.0)).unwrap(), 1);
        assert_eq!(s.region_of(Point2::new(1.0, 0.999)).unwrap(), 0);
        assert_eq!(s.value(Point2::new(1.5, 1.5)).unwrap(), 2.25);
        assert!(s.on_tear(Point2::new(0.3, 1.0), 1e-12));
    }

    #[test]
    fn fd_never_crosses_a_tear() {
        let s = step_surface();
        let surf = EmbeddingSurface::new(s);
        // Just above the tear: the backward stencil would land below it.
        let p = Point2::new(1.2, 1.0 + 1e-6);
        let (gx, gy) = surf.fd_gradient(p).unwrap();
        assert!((gx - 2.4).abs() < 1e-6);
        assert!(gy.abs() < 1e-6);
        // Just below: the forward stencil would land above it.
        let (gx, gy) = surf.fd_gradient(Point2::new(1.2, 1.0 - 1e-6)).unwrap();
        assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12);
    }

    #[test]
    fn custom_surface_validation() {
        let mut s = step_surface();
        s.regions.reverse();
        assert!(s.clone().into_surface().is_err());
        s.regions.clear();
        assert!(s.into_surface().is_err());
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal(vx in -20.0f64..20.0, vy in -20.0f64..20.0) {
            let w = tangent_basis((vx, vy));
            for i in 0..3 {
                prop_assert!((w[i].norm() - 1.0).abs() <= 1e-12);
                for j in (i + 1)..3 {
                    prop_assert!(w[i].dot(&w[j]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn metric_spectrum_matches_basis(vx in -5.0f64..5.0, vy in -5.0f64..5.0, theta in 0.1f64..3.0, alpha3 in 0.05f64..3.0) {
            prop_assume!(vx * vx + vy * vy > 1e-6);
            let m = LocalMetric::from_gradient((vx, vy), theta, alpha3).unwrap();
            let scale = m.sigma3d.amax();
            for (w, e) in m.basis.iter().zip(m.eigs) {
                prop_assert!((m.sigma3d * w - w * e).amax() <= 1e-10 * scale.max(1.0));
            }
            let mut got = SymmetricEigen::new(m.sigma3d).eigenvalues.as_slice().to_vec();
            let mut want = m.eigs.to_vec();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!(((g - w) / w).abs() <= 1e-9);
            }
            prop_assert!(((m.sigma3d.determinant() - m.det()) / m.det()).abs() <= 1e-9);
        }

        #[test]
        fn projection_identity(vx in -5.0f64..5.0, vy in -5.0f64..5.0, theta in 0.1f64..3.0, alpha3 in 0.05f64..3.0) {
            let m = LocalMetric::from_gradient((vx, vy), theta, alpha3).unwrap();
            let got = m.projected_inverse().unwrap();
            let want = Matrix2::identity() / (theta * theta);
            prop_assert!((got - want).amax() <= 1e-9 / (theta * theta));
        }
    }
}
