//! Plain 2-D geometry shared by every module: points, axis-aligned boxes,
//! segments and polylines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2 { x, y }
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

/// Closed axis-aligned box `[x_lo, x_hi] x [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Domain {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(x) || !ok(y) {
            return Err(Error::InvalidParameter(format!(
                "domain bounds must be finite and increasing, got x={x:?} y={y:?}"
            )));
        }
        Ok(Domain { x, y })
    }

    pub fn width(&self) -> f64 {
        self.x.1 - self.x.0
    }

    pub fn height(&self) -> f64 {
        self.y.1 - self.y.0
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x.0 && p.x <= self.x.1 && p.y >= self.y.0 && p.y <= self.y.1
    }

    pub fn check(&self, p: Point2) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x: p.x,
                y: p.y,
                domain: self.to_string(),
            })
        }
    }

    /// Regular `nx x ny` lattice including the edges, ordered with `y` in the
    /// outer loop and `x` in the inner loop.
    pub fn lattice(&self, nx: usize, ny: usize) -> Result<Vec<Point2>> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice needs at least 2 points per axis, got {nx}x{ny}"
            )));
        }
        let xs = linspace(self.x.0, self.x.1, nx);
        let ys = linspace(self.y.0, self.y.1, ny);
        Ok(ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Point2::new(x, y)))
            .collect())
    }

    /// Cell-centred `nx x ny` grid (e.g. 4x4 on [0,2]^2 gives 0.25, 0.75, ...).
    pub fn cell_centres(&self, nx: usize, ny: usize) -> Result<Vec<Point2>> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter("empty cell grid".into()));
        }
        let dx = self.width() / nx as f64;
        let dy = self.height() / ny as f64;
        Ok((0..ny)
            .flat_map(|j| {
                (0..nx).map(move |i| {
                    Point2::new(
                        self.x.0 + (i as f64 + 0.5) * dx,
                        self.y.0 + (j as f64 + 0.5) * dy,
                    )
                })
            })
            .collect())
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}, {}] x [{}, {}]",
            self.x.0, self.x.1, self.y.0, self.y.1
        )
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point2,
    pub end: Point2,
}

impl Segment {
    pub const fn new(start: Point2, end: Point2) -> Self {
        Segment { start, end }
    }

    pub fn length(&self) -> f64 {
        self.start.dist(&self.end)
    }

    /// Point at parameter `t` in `[0, 1]`.
    pub fn at(&self, t: f64) -> Point2 {
        Point2::new(
            self.start.x + t * (self.end.x - self.start.x),
            self.start.y + t * (self.end.y - self.start.y),
        )
    }

    /// The `y` coordinate of the segment at abscissa `x`, if the segment spans it.
    pub fn y_at(&self, x: f64) -> Option<f64> {
        let (x0, x1) = (self.start.x.min(self.end.x), self.start.x.max(self.end.x));
        if x < x0 || x > x1 {
            return None;
        }
        let dx = self.end.x - self.start.x;
        if dx == 0.0 {
            return Some(self.start.y);
        }
        Some(self.start.y + (x - self.start.x) / dx * (self.end.y - self.start.y))
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        let (dx, dy) = (self.end.x - self.start.x, self.end.y - self.start.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.start.dist(&p);
        }
        let t = (((p.x - self.start.x) * dx + (p.y - self.start.y) * dy) / len2).clamp(0.0, 1.0);
        self.at(t).dist(&p)
    }
}

/// A polyline, optionally closed back to its first vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub vertices: Vec<Point2>,
    #[serde(default)]
    pub closed: bool,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>, closed: bool) -> Self {
        Polyline { vertices, closed }
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut segs: Vec<Segment> = self
            .vertices
            .windows(2)
            .map(|w| Segment::new(w[0], w[1]))
            .collect();
        if self.closed && self.vertices.len() > 2 {
            segs.push(Segment::new(
                *self.vertices.last().unwrap(),
                self.vertices[0],
            ));
        }
        segs
    }

    pub fn length(&self) -> f64 {
        self.segments().iter().map(Segment::length).sum()
    }

    /// Point at arc length `s` from the first vertex.
    pub fn point_at(&self, s: f64) -> Point2 {
        let segs = self.segments();
        let mut remaining = s.max(0.0);
        for seg in &segs {
            let len = seg.length();
            if remaining <= len && len > 0.0 {
                return seg.at(remaining / len);
            }
            remaining -= len;
        }
        segs.last().map(|s| s.end).unwrap_or(self.vertices[0])
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        self.segments()
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }
}
