//! Metrics, neighbourhoods, window erosion and set volumes.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{input, Error, Result};
use crate::math::unit_ball_volume;
use crate::pattern::MarkSpace;

/// A location in space-time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        if x.is_empty() {
            return input("spatial dimension must be at least 1");
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return input("coordinates must be finite");
        }
        Ok(Self { x, t })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return input("interval requires finite lo < hi");
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Axis-aligned observation box `W_S x W_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub spatial: Vec<Interval>,
    pub temporal: Interval,
}

impl Window {
    pub fn new(spatial: Vec<Interval>, temporal: Interval) -> Result<Self> {
        if spatial.is_empty() {
            return input("window needs at least one spatial axis");
        }
        for iv in spatial.iter().chain(core::iter::once(&temporal)) {
            Interval::new(iv.lo, iv.hi)?;
        }
        Ok(Self { spatial, temporal })
    }

    /// `[0,1]^d x [0,1]`.
    pub fn unit(d: usize) -> Self {
        let u = Interval { lo: 0.0, hi: 1.0 };
        Self {
            spatial: alloc::vec![u; d.max(1)],
            temporal: u,
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn spatial_volume(&self) -> f64 {
        self.spatial.iter().map(Interval::len).product()
    }

    pub fn temporal_length(&self) -> f64 {
        self.temporal.len()
    }

    pub fn volume(&self) -> f64 {
        self.spatial_volume() * self.temporal_length()
    }

    pub fn contains(&self, p: &SpaceTimePoint) -> bool {
        p.x.len() == self.dim() && self.contains_raw(&p.x, p.t)
    }

    pub fn contains_raw(&self, x: &[f64], t: f64) -> bool {
        self.temporal.contains(t) && self.spatial.iter().zip(x).all(|(iv, v)| iv.contains(*v))
    }

    /// Distance from `x` to the spatial boundary (nonpositive outside).
    pub fn spatial_border_distance(&self, x: &[f64]) -> f64 {
        self.spatial
            .iter()
            .zip(x)
            .map(|(iv, v)| (v - iv.lo).min(iv.hi - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn temporal_border_distance(&self, t: f64) -> f64 {
        (t - self.temporal.lo).min(self.temporal.hi - t)
    }

    /// Shrinks every spatial axis by `r` and the time axis by `t` on both ends.
    pub fn erode(&self, r: f64, t: f64) -> Result<Window> {
        if !(r >= 0.0 && t >= 0.0) {
            return input("erosion radii must be nonnegative");
        }
        let shrink = |iv: &Interval, by: f64| -> Option<Interval> {
            let (lo, hi) = (iv.lo + by, iv.hi - by);
            (lo < hi).then_some(Interval { lo, hi })
        };
        let spatial: Option<Vec<_>> = self.spatial.iter().map(|iv| shrink(iv, r)).collect();
        match (spatial, shrink(&self.temporal, t)) {
            (Some(spatial), Some(temporal)) => Ok(Window { spatial, temporal }),
            _ => Err(Error::ErosionExceedsWindow { r, t }),
        }
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.temporal.lo <= other.temporal.lo
            && other.temporal.hi <= self.temporal.hi
            && self
                .spatial
                .iter()
                .zip(&other.spatial)
                .all(|(a, b)| a.lo <= b.lo && b.hi <= a.hi)
    }

    pub fn scale(&self, beta_s: f64, beta_t: f64) -> Window {
        Window {
            spatial: self
                .spatial
                .iter()
                .map(|iv| Interval {
                    lo: iv.lo * beta_s,
                    hi: iv.hi * beta_s,
                })
                .collect(),
            temporal: Interval {
                lo: self.temporal.lo * beta_t,
                hi: self.temporal.hi * beta_t,
            },
        }
    }
}

/// Euclidean distance between two coordinate slices.
#[inline]
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, v) in a.iter().zip(b) {
        let d = u - v;
        s += d * d;
    }
    libm::sqrt(s)
}

fn same_dim(a: &SpaceTimePoint, b: &SpaceTimePoint) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// `max(|x - y|, |t - s|)`.
pub fn sup_metric(a: &SpaceTimePoint, b: &SpaceTimePoint) -> Result<f64> {
    same_dim(a, b)?;
    Ok(euclid(&a.x, &b.x).max(libm::fabs(a.t - b.t)))
}

/// Space-time-mark distance: max form for interval marks, additive for labels.
pub fn full_metric(
    a: &SpaceTimePoint,
    ma: f64,
    b: &SpaceTimePoint,
    mb: f64,
    ms: &MarkSpace,
) -> Result<f64> {
    if !ms.is_valid(ma) || !ms.is_valid(mb) {
        return input("mark outside mark space");
    }
    let d = sup_metric(a, b)?;
    let dm = libm::fabs(ma - mb);
    Ok(if ms.is_labels() { d + dm } else { d.max(dm) })
}

/// Closed cylinder of spatial radius `r` and temporal half-height `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub center: SpaceTimePoint,
    pub r: f64,
    pub t: f64,
}

impl Cylinder {
    pub fn new(center: SpaceTimePoint, r: f64, t: f64) -> Result<Self> {
        if !(r >= 0.0 && t >= 0.0) {
            return input("cylinder radii must be nonnegative");
        }
        Ok(Self { center, r, t })
    }
}

pub fn cylinder_contains(c: &Cylinder, p: &SpaceTimePoint) -> Result<bool> {
    same_dim(&c.center, p)?;
    Ok(euclid(&c.center.x, &p.x) <= c.r && libm::fabs(c.center.t - p.t) <= c.t)
}

/// `2 t r^d omega_d`.
pub fn cylinder_volume(r: f64, t: f64, d: usize) -> Result<f64> {
    if !(r >= 0.0 && t >= 0.0) {
        return input("cylinder radii must be nonnegative");
    }
    if d == 0 {
        return input("dimension must be at least 1");
    }
    Ok(2.0 * t * libm::pow(r, d as f64) * unit_ball_volume(d))
}

/// Double cone in the plane: directions in `(phi, psi]` modulo `pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone2D {
    pub center: SpaceTimePoint,
    pub phi: f64,
    pub psi: f64,
    pub r: f64,
    pub t: f64,
}

impl Cone2D {
    pub fn new(center: SpaceTimePoint, phi: f64, psi: f64, r: f64, t: f64) -> Result<Self> {
        if center.dim() != 2 {
            return Err(Error::Unsupported(
                "cones are defined in the plane only".into(),
            ));
        }
        check_cone_angles(phi, psi)?;
        if !(r >= 0.0 && t >= 0.0) {
            return input("cone radii must be nonnegative");
        }
        Ok(Self {
            center,
            phi,
            psi,
            r,
            t,
        })
    }

    pub fn volume(&self) -> f64 {
        cone_volume(self.phi, self.psi, self.r, self.t)
    }
}

pub(crate) fn check_cone_angles(phi: f64, psi: f64) -> Result<()> {
    if !(-PI / 2.0..PI / 2.0).contains(&phi) {
        return input("phi must lie in [-pi/2, pi/2)");
    }
    if !(phi < psi && psi <= phi + PI) {
        return input("psi must lie in (phi, phi + pi]");
    }
    Ok(())
}

/// Lebesgue measure of the double cone.
pub fn cone_volume(phi: f64, psi: f64, r: f64, t: f64) -> f64 {
    2.0 * t * r * r * (psi - phi)
}

/// Direction test for a planar displacement, without the radius checks.
#[inline]
pub fn in_cone_direction(dx: f64, dy: f64, phi: f64, psi: f64) -> bool {
    if psi >= phi + PI {
        return true;
    }
    let mut a = libm::atan2(dy, dx);
    while a <= phi {
        a += PI;
    }
    while a > phi + PI {
        a -= PI;
    }
    a <= psi
}

pub fn cone_contains(c: &Cone2D, p: &SpaceTimePoint) -> Result<bool> {
    same_dim(&c.center, p)?;
    let dx = p.x[0] - c.center.x[0];
    let dy = p.x[1] - c.center.x[1];
    Ok(euclid(&c.center.x, &p.x) <= c.r
        && libm::fabs(c.center.t - p.t) <= c.t
        && in_cone_direction(dx, dy, c.phi, c.psi))
}
