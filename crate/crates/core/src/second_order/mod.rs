//! Marked second-order reduced moment measures and K-function estimators
//! with minus-sampling edge correction.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input, Error, Result};
use crate::geometry::{check_cone_angles, cone_volume, euclid, in_cone_direction, Window};
use crate::intensity::{
    voronoi_ground, voronoi_marked, voronoi_separable, MarkedIntensity, Quadrature,
    SeparableOptions, SeparableSetup, INTENSITY_FLOOR,
};
use crate::math::{derive_seed, par_map, unit_ball_volume};
use crate::pattern::{MarkSet, MarkedPattern};

mod pairs;

use pairs::PairIndex;

/// How the window and mark-set masses in the denominator are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HamiltonScenario {
    /// `l(W eroded) nu(C) nu(D)`, all known.
    Known,
    /// `nu(C)` and `nu(D)` replaced by intensity-reweighted counts.
    #[default]
    EstimatedMarks,
    /// Eroded window volume replaced by `sum 1 / lambda_g` over ground points.
    EstimatedWindow,
    /// Both replaced, combined as a ratio.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErosionMode {
    /// Every lag pair `(r, t)` uses the window eroded by `(r, t)`.
    #[default]
    PerCell,
    /// Every lag pair uses the window eroded by the largest lags.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairSearch {
    #[default]
    Indexed,
    /// Plain double loop over all ordered pairs.
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KOptions {
    pub scenario: HamiltonScenario,
    pub erosion: ErosionMode,
    pub search: PairSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightsSource {
    TrueIntensity,
    PluggedEstimate,
    Smoothed { n: usize, retention: f64 },
}

/// Intensity values at the points of a pattern, in point order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointWeights {
    /// `lambda(x_i, t_i, m_i)`.
    pub lambda: Vec<f64>,
    /// `lambda_g(x_i, t_i)`, needed when the window volume is estimated.
    pub ground: Option<Vec<f64>>,
    pub source: WeightsSource,
}

impl PointWeights {
    pub fn new(lambda: Vec<f64>, source: WeightsSource) -> Self {
        Self {
            lambda,
            ground: None,
            source,
        }
    }

    pub fn constant(p: &MarkedPattern, value: f64) -> Self {
        Self::new(vec![value; p.len()], WeightsSource::TrueIntensity)
    }

    pub fn from_fn(p: &MarkedPattern, f: impl Fn(&[f64], f64, f64) -> f64) -> Self {
        let lambda = p
            .points()
            .iter()
            .map(|q| f(&q.loc.x, q.loc.t, q.mark))
            .collect();
        Self::new(lambda, WeightsSource::TrueIntensity)
    }

    /// Plug-in weights from an estimate built on `p`.
    pub fn from_estimate(p: &MarkedPattern, est: &dyn MarkedIntensity) -> Self {
        Self::new(
            (0..p.len()).map(|i| est.at_point(i)).collect(),
            WeightsSource::PluggedEstimate,
        )
    }

    pub fn with_ground(mut self, ground: Vec<f64>) -> Self {
        self.ground = Some(ground);
        self
    }

    pub fn with_ground_fn(self, p: &MarkedPattern, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let g = p.points().iter().map(|q| f(&q.loc.x, q.loc.t)).collect();
        self.with_ground(g)
    }

    /// All intensities multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|v| v * factor).collect(),
            ground: self
                .ground
                .as_ref()
                .map(|g| g.iter().map(|v| v * factor).collect()),
            source: self.source,
        }
    }
}

/// Builds weights for a (possibly thinned) pattern.
pub trait WeightsBuilder: Sync {
    /// `retention` is the thinning probability that produced `p` (1 for the original).
    fn build(&self, p: &MarkedPattern, retention: f64) -> Result<PointWeights>;
}

/// Known intensity `lambda(x, t, m)`, multiplied by the retention probability.
pub struct TrueIntensity<F>(pub F);

impl<F: Fn(&[f64], f64, f64) -> f64 + Sync> WeightsBuilder for TrueIntensity<F> {
    fn build(&self, p: &MarkedPattern, retention: f64) -> Result<PointWeights> {
        Ok(PointWeights::from_fn(p, |x, t, m| {
            retention * (self.0)(x, t, m)
        }))
    }
}

/// Voronoi estimators usable as plug-in weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plugin {
    Marked,
    Separable(SeparableSetup, SeparableOptions),
}

/// Plug-in weights re-estimated on every pattern they are asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PluginWeights {
    pub plugin: Plugin,
    pub quadrature: Quadrature,
    /// Also estimate the ground intensity (needed by the window-estimating scenarios).
    pub ground: bool,
}

impl WeightsBuilder for PluginWeights {
    fn build(&self, p: &MarkedPattern, _retention: f64) -> Result<PointWeights> {
        let est: Box<dyn MarkedIntensity> = match self.plugin {
            Plugin::Marked => Box::new(voronoi_marked(p, &self.quadrature)?),
            Plugin::Separable(setup, options) => {
                Box::new(voronoi_separable(p, setup, options, &self.quadrature)?)
            }
        };
        let w = PointWeights::from_estimate(p, est.as_ref());
        if self.ground {
            let g = voronoi_ground(p, &self.quadrature)?;
            Ok(w.with_ground((0..p.len()).map(|i| g.at_point(i)).collect()))
        } else {
            Ok(w)
        }
    }
}

/// Data-quality counters carried by every surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityReport {
    /// Points whose intensity was raised to the floor.
    pub floored_weights: usize,
    /// Contributing ordered pairs involving a floored weight.
    pub floored_pairs: usize,
    /// Lag cells whose eroded window holds no first point.
    pub cells_without_first_points: usize,
    /// Lag cells with pairs but a vanishing denominator; reported as 0.
    pub undefined_cells: usize,
    /// Thinnings without C- or D-points.
    pub degenerate_thinnings: usize,
    pub warnings: Vec<String>,
}

impl QualityReport {
    fn absorb(&mut self, other: &QualityReport) {
        self.floored_weights += other.floored_weights;
        self.floored_pairs += other.floored_pairs;
        self.cells_without_first_points += other.cells_without_first_points;
        self.undefined_cells += other.undefined_cells;
        self.degenerate_thinnings += other.degenerate_thinnings;
        self.warnings.extend(other.warnings.iter().cloned());
    }
}

/// Estimated K-function on an `(r, t)` lag grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KSurface {
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[i * t.len() + j]` is the value at `(r[i], t[j])`.
    pub values: Vec<f64>,
    pub c: MarkSet,
    pub d: MarkSet,
    pub scenario: Option<HamiltonScenario>,
    pub weights_source: Option<WeightsSource>,
    pub dim: usize,
    /// Per-cell standard deviation across averaged estimates.
    pub spread: Option<Vec<f64>>,
    pub report: QualityReport,
}

impl KSurface {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t.len() + j]
    }

    fn same_grid(&self, other: &KSurface) -> Result<()> {
        if self.r != other.r || self.t != other.t {
            return input("surfaces live on different lag grids");
        }
        Ok(())
    }

    /// Cellwise `self - other`.
    pub fn minus(&self, other: &KSurface) -> Result<KSurface> {
        self.same_grid(other)?;
        let mut out = self.clone();
        for (v, o) in out.values.iter_mut().zip(&other.values) {
            *v -= o;
        }
        out.spread = None;
        Ok(out)
    }

    /// Cellwise `self - 2 t r^d omega_d`.
    pub fn minus_poisson(&self) -> KSurface {
        let mut out = self.clone();
        for (i, &r) in self.r.iter().enumerate() {
            for (j, &t) in self.t.iter().enumerate() {
                out.values[i * self.t.len() + j] -= poisson_value(r, t, self.dim);
            }
        }
        out.spread = None;
        out
    }
}

/// `2 t r^d omega_d`, the K-function of a Poisson process.
pub fn poisson_value(r: f64, t: f64, d: usize) -> f64 {
    2.0 * t * libm::pow(r, d as f64) * unit_ball_volume(d)
}

/// Theoretical surface of a Poisson process.
pub fn poisson_reference(r: &[f64], t: &[f64], d: usize) -> Result<KSurface> {
    if d == 0 {
        return input("dimension must be at least 1");
    }
    check_lags(r, t)?;
    let values = r
        .iter()
        .flat_map(|&rv| t.iter().map(move |&tv| poisson_value(rv, tv, d)))
        .collect();
    Ok(KSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values,
        c: MarkSet::Full,
        d: MarkSet::Full,
        scenario: None,
        weights_source: None,
        dim: d,
        spread: None,
        report: QualityReport::default(),
    })
}

pub const DEFAULT_LAG_COUNT: usize = 20;

/// 20 spatial lags up to a quarter of the shortest spatial side and 20
/// temporal lags up to a quarter of the time span, excluding zero.
pub fn default_lags(w: &Window) -> (Vec<f64>, Vec<f64>) {
    let side = w
        .spatial
        .iter()
        .map(|iv| iv.len())
        .fold(f64::INFINITY, f64::min);
    let grid = |max: f64| {
        (1..=DEFAULT_LAG_COUNT)
            .map(|k| max * k as f64 / DEFAULT_LAG_COUNT as f64)
            .collect()
    };
    (grid(0.25 * side), grid(0.25 * w.temporal_length()))
}

/// Set `E` of space-time displacements.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuringSet {
    Cylinder {
        r: f64,
        t: f64,
    },
    /// Sup-metric ball, i.e. `Cylinder { r, t: r }`.
    Ball {
        r: f64,
    },
    /// Planar double cone with directions in `(phi, psi]` modulo `pi`.
    Cone {
        phi: f64,
        psi: f64,
        r: f64,
        t: f64,
    },
    /// Union of closed boxes `[lo, hi]` in `(dx_1, .., dx_d, dt)`.
    BoxUnion(Vec<(Vec<f64>, Vec<f64>)>),
}

impl StructuringSet {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            StructuringSet::Cylinder { r, t } | StructuringSet::Cone { r, t, .. }
                if !(*r >= 0.0 && *t >= 0.0) =>
            {
                input("structuring set radii must be nonnegative")
            }
            StructuringSet::Ball { r } if !(*r >= 0.0) => input("ball radius must be nonnegative"),
            StructuringSet::Cone { phi, psi, .. } => {
                if d != 2 {
                    return Err(Error::Unsupported(
                        "cones are defined in the plane only".into(),
                    ));
                }
                check_cone_angles(*phi, *psi)
            }
            StructuringSet::BoxUnion(boxes) => {
                if boxes.is_empty() {
                    return input("box union is empty");
                }
                for (lo, hi) in boxes {
                    if lo.len() != d + 1 || hi.len() != d + 1 {
                        return Err(Error::Dimension {
                            expected: d + 1,
                            got: lo.len().min(hi.len()),
                        });
                    }
                    if lo
                        .iter()
                        .zip(hi)
                        .any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b))
                    {
                        return input("box bounds must be finite with lo <= hi");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Smallest `(r, t)` whose cylinder contains the set.
    pub fn circumscribing(&self) -> (f64, f64) {
        match self {
            StructuringSet::Cylinder { r, t } | StructuringSet::Cone { r, t, .. } => (*r, *t),
            StructuringSet::Ball { r } => (*r, *r),
            StructuringSet::BoxUnion(boxes) => {
                boxes.iter().fold((0.0f64, 0.0f64), |(r, t), (lo, hi)| {
                    let n = lo.len() - 1;
                    let s: f64 = (0..n)
                        .map(|k| libm::fabs(lo[k]).max(libm::fabs(hi[k])))
                        .map(|v| v * v)
                        .sum();
                    (
                        r.max(libm::sqrt(s)),
                        t.max(libm::fabs(lo[n]).max(libm::fabs(hi[n]))),
                    )
                })
            }
        }
    }

    pub fn contains(&self, dx: &[f64], dt: f64) -> bool {
        let norm = || libm::sqrt(dx.iter().map(|v| v * v).sum::<f64>());
        match self {
            StructuringSet::Cylinder { r, t } => norm() <= *r && libm::fabs(dt) <= *t,
            StructuringSet::Ball { r } => norm() <= *r && libm::fabs(dt) <= *r,
            StructuringSet::Cone { phi, psi, r, t } => {
                norm() <= *r && libm::fabs(dt) <= *t && in_cone_direction(dx[0], dx[1], *phi, *psi)
            }
            StructuringSet::BoxUnion(boxes) => boxes.iter().any(|(lo, hi)| {
                dx.iter()
                    .chain(core::iter::once(&dt))
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (a, b))| a <= v && v <= b)
            }),
        }
    }

    /// Lebesgue measure, when available in closed form.
    pub fn volume(&self, d: usize) -> Option<f64> {
        match self {
            StructuringSet::Cylinder { r, t } => Some(poisson_value(*r, *t, d)),
            StructuringSet::Ball { r } => Some(poisson_value(*r, *r, d)),
            StructuringSet::Cone { phi, psi, r, t } => Some(cone_volume(*phi, *psi, *r, *t)),
            StructuringSet::BoxUnion(_) => None,
        }
    }
}

fn check_lags(r: &[f64], t: &[f64]) -> Result<()> {
    for (name, g) in [("r", r), ("t", t)] {
        if g.is_empty() {
            return input(format!("{name} grid is empty"));
        }
        if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return input(format!("{name} grid must be finite and nonnegative"));
        }
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return input(format!("{name} grid must be strictly increasing"));
        }
    }
    Ok(())
}

fn in_spatial_erosion(w: &Window, x: &[f64], r: f64) -> bool {
    w.spatial
        .iter()
        .zip(x)
        .all(|(iv, &v)| iv.lo + r <= v && v <= iv.hi - r)
}

fn in_temporal_erosion(w: &Window, t: f64, by: f64) -> bool {
    w.temporal.lo + by <= t && t <= w.temporal.hi - by
}

#[derive(Debug, Clone, Copy)]
enum Shape<'a> {
    Cylinder,
    Directional { phi: f64, psi: f64 },
    Set(&'a StructuringSet),
}

#[derive(Debug, Clone, Copy)]
enum Denominator {
    Scenario {
        scenario: HamiltonScenario,
        nu_c: f64,
        nu_d: f64,
    },
    /// `l(W eroded) (N_C / N) (N_D / N)`.
    Stationary { frac_c: f64, frac_d: f64 },
}

struct Setup<'a> {
    p: &'a MarkedPattern,
    r: &'a [f64],
    t: &'a [f64],
    inv: Vec<f64>,
    inv_ground: Option<Vec<f64>>,
    floored: Vec<bool>,
    in_c: Vec<bool>,
    in_d: Vec<bool>,
    symmetric: bool,
    erosion: ErosionMode,
    shape: Shape<'a>,
    floored_weights: usize,
}

impl<'a> Setup<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        p: &'a MarkedPattern,
        c: &MarkSet,
        d: &MarkSet,
        r: &'a [f64],
        t: &'a [f64],
        w: &PointWeights,
        erosion: ErosionMode,
        shape: Shape<'a>,
        symmetric: bool,
    ) -> Result<Self> {
        check_lags(r, t)?;
        let (rm, tm) = (r[r.len() - 1], t[t.len() - 1]);
        p.window().erode(rm, tm)?;
        if w.lambda.len() != p.len() {
            return input(format!("{} weights for {} points", w.lambda.len(), p.len()));
        }
        let check = |v: &[f64]| -> Result<()> {
            if v.iter().any(|x| !(*x >= 0.0) || x.is_infinite()) {
                return input("intensity weights must be finite and nonnegative");
            }
            Ok(())
        };
        check(&w.lambda)?;
        if let Some(g) = &w.ground {
            if g.len() != p.len() {
                return input(format!("{} ground weights for {} points", g.len(), p.len()));
            }
            check(g)?;
        }
        let floored: Vec<bool> = w.lambda.iter().map(|&v| v < INTENSITY_FLOOR).collect();
        let floored_weights = floored.iter().filter(|&&f| f).count();
        let inv = w
            .lambda
            .iter()
            .map(|&v| 1.0 / v.max(INTENSITY_FLOOR))
            .collect();
        let inv_ground = w
            .ground
            .as_ref()
            .map(|g| g.iter().map(|&v| 1.0 / v.max(INTENSITY_FLOOR)).collect());
        Ok(Self {
            p,
            r,
            t,
            inv,
            inv_ground,
            floored,
            in_c: p.points().iter().map(|q| c.contains(q.mark)).collect(),
            in_d: p.points().iter().map(|q| d.contains(q.mark)).collect(),
            symmetric,
            erosion,
            shape,
            floored_weights,
        })
    }

    fn max_lags(&self) -> (f64, f64) {
        (self.r[self.r.len() - 1], self.t[self.t.len() - 1])
    }

    /// Whether point `i` may serve as a first point in lag cell `(a, b)`.
    fn qualifies(&self, i: usize, a: usize, b: usize) -> bool {
        let w = self.p.window();
        let q = &self.p.points()[i].loc;
        let (r, t) = match self.erosion {
            ErosionMode::PerCell => (self.r[a], self.t[b]),
            ErosionMode::Fixed => self.max_lags(),
        };
        in_spatial_erosion(w, &q.x, r) && in_temporal_erosion(w, q.t, t)
    }

    /// Largest lag indices for which `i` lies in the eroded window.
    fn erosion_extent(&self, i: usize) -> Option<(usize, usize)> {
        let w = self.p.window();
        let q = &self.p.points()[i].loc;
        match self.erosion {
            ErosionMode::PerCell => {
                let a = self
                    .r
                    .iter()
                    .take_while(|&&r| in_spatial_erosion(w, &q.x, r))
                    .count();
                let b = self
                    .t
                    .iter()
                    .take_while(|&&t| in_temporal_erosion(w, q.t, t))
                    .count();
                (a > 0 && b > 0).then(|| (a - 1, b - 1))
            }
            ErosionMode::Fixed => {
                let (rm, tm) = self.max_lags();
                (in_spatial_erosion(w, &q.x, rm) && in_temporal_erosion(w, q.t, tm))
                    .then(|| (self.r.len() - 1, self.t.len() - 1))
            }
        }
    }

    fn is_first(&self, i: usize) -> bool {
        self.in_c[i] || (self.symmetric && self.in_d[i])
    }

    fn pair_factor(&self, i: usize, j: usize) -> f64 {
        let cd = (self.in_c[i] && self.in_d[j]) as u8;
        let dc = (self.symmetric && self.in_d[i] && self.in_c[j]) as u8;
        (cd + dc) as f64
    }

    fn displacement(&self, i: usize, j: usize, dx: &mut Vec<f64>) -> (f64, f64) {
        let (a, b) = (&self.p.points()[i].loc, &self.p.points()[j].loc);
        dx.clear();
        dx.extend(b.x.iter().zip(&a.x).map(|(u, v)| u - v));
        (euclid(&a.x, &b.x), b.t - a.t)
    }

    fn direction_ok(&self, dx: &[f64], dt: f64) -> bool {
        match self.shape {
            Shape::Cylinder => true,
            Shape::Directional { phi, psi } => in_cone_direction(dx[0], dx[1], phi, psi),
            Shape::Set(e) => e.contains(dx, dt),
        }
    }

    /// Pair membership in lag cell `(a, b)`.
    fn in_cell(&self, gap: f64, dx: &[f64], dt: f64, a: usize, b: usize) -> bool {
        match self.shape {
            Shape::Set(e) => e.contains(dx, dt),
            _ => gap <= self.r[a] && libm::fabs(dt) <= self.t[b] && self.direction_ok(dx, dt),
        }
    }

    fn numerators_indexed(&self) -> (Vec<f64>, usize) {
        let (nr, nt) = (self.r.len(), self.t.len());
        let mut num = vec![0.0; nr * nt];
        let mut floored_pairs = 0;
        let (rm, tm) = self.max_lags();
        let index = PairIndex::new(self.p, rm, tm);
        let mut cands = Vec::new();
        let mut dx = Vec::new();
        for i in 0..self.p.len() {
            if !self.is_first(i) {
                continue;
            }
            let Some((am, bm)) = self.erosion_extent(i) else {
                continue;
            };
            let q = &self.p.points()[i].loc;
            index.candidates(&q.x, q.t, &mut cands);
            for &j in &cands {
                if j == i {
                    continue;
                }
                let k = self.pair_factor(i, j);
                if k == 0.0 {
                    continue;
                }
                let (gap, dt) = self.displacement(i, j, &mut dx);
                let (a0, b0) = match self.shape {
                    Shape::Set(e) => {
                        if !e.contains(&dx, dt) {
                            continue;
                        }
                        (0, 0)
                    }
                    _ => {
                        if !self.direction_ok(&dx, dt) {
                            continue;
                        }
                        let adt = libm::fabs(dt);
                        (
                            self.r.partition_point(|&r| !(gap <= r)),
                            self.t.partition_point(|&t| !(adt <= t)),
                        )
                    }
                };
                if a0 > am || b0 > bm {
                    continue;
                }
                let w = self.inv[i] * self.inv[j];
                for a in a0..=am {
                    for b in b0..=bm {
                        num[a * nt + b] += w * k;
                    }
                }
                if self.floored[i] || self.floored[j] {
                    floored_pairs += 1;
                }
            }
        }
        (num, floored_pairs)
    }

    fn numerators_brute(&self) -> (Vec<f64>, usize) {
        let (nr, nt) = (self.r.len(), self.t.len());
        let n = self.p.len();
        let mut num = vec![0.0; nr * nt];
        let mut contributed = vec![false; if self.floored_weights > 0 { n * n } else { 0 }];
        let mut dx = Vec::new();
        for a in 0..nr {
            for b in 0..nt {
                for i in 0..n {
                    if !self.is_first(i) || !self.qualifies(i, a, b) {
                        continue;
                    }
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let k = self.pair_factor(i, j);
                        if k == 0.0 {
                            continue;
                        }
                        let (gap, dt) = self.displacement(i, j, &mut dx);
                        if self.in_cell(gap, &dx, dt, a, b) {
                            num[a * nt + b] += self.inv[i] * self.inv[j] * k;
                            if !contributed.is_empty() && (self.floored[i] || self.floored[j]) {
                                contributed[i * n + j] = true;
                            }
                        }
                    }
                }
            }
        }
        (num, contributed.iter().filter(|&&c| c).count())
    }

    fn surface(&self, search: PairSearch, denom: Denominator) -> Result<(Vec<f64>, QualityReport)> {
        let (nr, nt) = (self.r.len(), self.t.len());
        if let Denominator::Scenario {
            scenario: HamiltonScenario::EstimatedWindow | HamiltonScenario::Ratio,
            ..
        } = denom
        {
            if self.inv_ground.is_none() {
                return input("this scenario needs ground intensity weights");
            }
        }
        let (num, floored_pairs) = match search {
            PairSearch::Indexed => self.numerators_indexed(),
            PairSearch::BruteForce => self.numerators_brute(),
        };
        let mut report = QualityReport {
            floored_weights: self.floored_weights,
            floored_pairs,
            ..Default::default()
        };
        let extents: Vec<Option<(usize, usize)>> =
            (0..self.p.len()).map(|i| self.erosion_extent(i)).collect();
        let w = self.p.window();
        let mut values = vec![0.0; nr * nt];
        for a in 0..nr {
            for b in 0..nt {
                let (re, te) = match self.erosion {
                    ErosionMode::PerCell => (self.r[a], self.t[b]),
                    ErosionMode::Fixed => self.max_lags(),
                };
                let ell = w.erode(re, te)?.volume();
                let (mut sc, mut sd, mut sg) = (0.0, 0.0, 0.0);
                let mut any_first = false;
                for (i, e) in extents.iter().enumerate() {
                    let Some((am, bm)) = *e else { continue };
                    if a > am || b > bm {
                        continue;
                    }
                    any_first |= self.is_first(i);
                    if self.in_c[i] {
                        sc += self.inv[i];
                    }
                    if self.in_d[i] {
                        sd += self.inv[i];
                    }
                    if let Some(g) = &self.inv_ground {
                        sg += g[i];
                    }
                }
                if !any_first {
                    report.cells_without_first_points += 1;
                }
                let den = match denom {
                    Denominator::Scenario {
                        scenario,
                        nu_c,
                        nu_d,
                    } => match scenario {
                        HamiltonScenario::Known => ell * nu_c * nu_d,
                        HamiltonScenario::EstimatedMarks => sc * sd / ell,
                        HamiltonScenario::EstimatedWindow => sg * nu_c * nu_d,
                        HamiltonScenario::Ratio => sc * sd / sg,
                    },
                    Denominator::Stationary { frac_c, frac_d } => ell * frac_c * frac_d,
                };
                let den = if self.symmetric { 2.0 * den } else { den };
                let cell = a * nt + b;
                values[cell] = if num[cell] == 0.0 {
                    0.0
                } else if den > 0.0 && den.is_finite() {
                    num[cell] / den
                } else {
                    report.undefined_cells += 1;
                    0.0
                };
            }
        }
        if report.undefined_cells > 0 {
            report.warnings.push(format!(
                "{} lag cell(s) with pairs but no {} mass in the eroded window; set to 0",
                report.undefined_cells,
                if self.symmetric { "C or D" } else { "D" }
            ));
        }
        Ok((values, report))
    }
}

fn mark_masses(p: &MarkedPattern, c: &MarkSet, d: &MarkSet) -> Result<(f64, f64)> {
    let (nu_c, nu_d) = (p.nu(c), p.nu(d));
    if !(nu_c > 0.0 && nu_d > 0.0) {
        return input(format!(
            "mark sets need positive reference mass, got nu(C) = {nu_c}, nu(D) = {nu_d}"
        ));
    }
    Ok((nu_c, nu_d))
}

#[allow(clippy::too_many_arguments)]
fn run(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
    shape: Shape<'_>,
    symmetric: bool,
) -> Result<KSurface> {
    let (nu_c, nu_d) = mark_masses(p, c, d)?;
    let setup = Setup::new(p, c, d, r, t, w, opts.erosion, shape, symmetric)?;
    let denom = Denominator::Scenario {
        scenario: opts.scenario,
        nu_c,
        nu_d,
    };
    let (values, report) = setup.surface(opts.search, denom)?;
    Ok(KSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values,
        c: c.clone(),
        d: d.clone(),
        scenario: Some(opts.scenario),
        weights_source: Some(w.source),
        dim: p.dim(),
        spread: None,
        report,
    })
}

/// Estimate of the reduced moment measure `K^{CD}(E)`.
pub fn k_measure_hat(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    e: &StructuringSet,
    w: &PointWeights,
    opts: &KOptions,
) -> Result<(f64, QualityReport)> {
    e.validate(p.dim())?;
    let (r, t) = e.circumscribing();
    let s = run(p, c, d, &[r], &[t], w, opts, Shape::Set(e), false)?;
    Ok((s.values[0], s.report))
}

/// Marked inhomogeneous K-function on a lag grid.
pub fn k_inhom(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    run(p, c, d, r, t, w, opts, Shape::Cylinder, false)
}

/// `K^{CD}(r) = K^{CD}(r, r)` over sup-metric balls.
pub fn k_ball(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<Vec<f64>> {
    r.iter()
        .map(|&rv| k_measure_hat(p, c, d, &StructuringSet::Ball { r: rv }, w, opts).map(|v| v.0))
        .collect()
}

/// Symmetrised estimator `(K^{CD} + K^{DC}) / 2`, summed in one pass.
pub fn k_symmetrized(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    run(p, c, d, r, t, w, opts, Shape::Cylinder, true)
}

/// Directional K-function over planar double cones `(phi, psi]`.
#[allow(clippy::too_many_arguments)]
pub fn k_directional(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    phi: f64,
    psi: f64,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    if p.dim() != 2 {
        return Err(Error::Unsupported(
            "directional K needs a planar spatial domain".into(),
        ));
    }
    check_cone_angles(phi, psi)?;
    run(
        p,
        c,
        d,
        r,
        t,
        w,
        opts,
        Shape::Directional { phi, psi },
        false,
    )
}

/// Cross K-function from type `i` to type `j` of a multitype pattern.
///
/// `component` holds `lambda_{m_k}(x_k, t_k)`, the intensity of each point's own component.
#[allow(clippy::too_many_arguments)]
pub fn k_cross_multitype(
    p: &MarkedPattern,
    i: u32,
    j: u32,
    r: &[f64],
    t: &[f64],
    component: &[f64],
    source: WeightsSource,
    opts: &KOptions,
) -> Result<KSurface> {
    let Some(k) = p.mark_space().n_labels() else {
        return input("cross K-functions need a label mark space");
    };
    for l in [i, j] {
        if l == 0 || l as usize > k {
            return input(format!("type {l} outside 1..={k}"));
        }
    }
    if component.len() != p.len() {
        return input(format!(
            "{} weights for {} points",
            component.len(),
            p.len()
        ));
    }
    let lambda = p
        .points()
        .iter()
        .zip(component)
        .map(|(q, &v)| v / p.mark_space().density(q.mark))
        .collect();
    let (c, d) = (MarkSet::labels(&[i]), MarkSet::labels(&[j]));
    let mut s = k_inhom(p, &c, &d, r, t, &PointWeights::new(lambda, source), opts)?;
    for l in [i, j] {
        if !p.points().iter().any(|q| q.mark == l as f64) {
            s.report.warnings.push(format!("component {l} is empty"));
        }
    }
    Ok(s)
}

/// Inhomogeneous K-function of the ground process, weighted by `lambda_g`.
pub fn k_ground(
    p: &MarkedPattern,
    r: &[f64],
    t: &[f64],
    ground: &[f64],
    source: WeightsSource,
    opts: &KOptions,
) -> Result<KSurface> {
    let w = PointWeights::new(ground.to_vec(), source).with_ground(ground.to_vec());
    let full = MarkSet::Full;
    let setup = Setup::new(
        p,
        &full,
        &full,
        r,
        t,
        &w,
        opts.erosion,
        Shape::Cylinder,
        false,
    )?;
    let denom = Denominator::Scenario {
        scenario: opts.scenario,
        nu_c: 1.0,
        nu_d: 1.0,
    };
    let (values, report) = setup.surface(opts.search, denom)?;
    Ok(KSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values,
        c: MarkSet::Full,
        d: MarkSet::Full,
        scenario: Some(opts.scenario),
        weights_source: Some(source),
        dim: p.dim(),
        spread: None,
        report,
    })
}

/// Stationary estimator with `lambda = N / l(W)` and empirical mark proportions.
pub fn k_stationary(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    opts: &KOptions,
) -> Result<KSurface> {
    let n = p.len();
    if n == 0 {
        return Err(Error::EmptyPattern);
    }
    let count = |s: &MarkSet| p.points().iter().filter(|q| s.contains(q.mark)).count() as f64;
    let (frac_c, frac_d) = (count(c) / n as f64, count(d) / n as f64);
    let lambda = n as f64 / p.window().volume();
    let w = PointWeights::new(vec![lambda; n], WeightsSource::PluggedEstimate);
    let setup = Setup::new(p, c, d, r, t, &w, opts.erosion, Shape::Cylinder, false)?;
    let (values, report) =
        setup.surface(opts.search, Denominator::Stationary { frac_c, frac_d })?;
    Ok(KSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values,
        c: c.clone(),
        d: d.clone(),
        scenario: None,
        weights_source: Some(WeightsSource::PluggedEstimate),
        dim: p.dim(),
        spread: None,
        report,
    })
}

pub const DEFAULT_RETENTION: f64 = 0.5;

/// Average of `n` estimates over independent thinnings with retention `retention`.
#[allow(clippy::too_many_arguments)]
pub fn k_smoothed(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    retention: f64,
    n: usize,
    builder: &dyn WeightsBuilder,
    seed: u64,
    opts: &KOptions,
) -> Result<KSurface> {
    if !(retention > 0.0 && retention < 1.0) {
        return input("retention must lie in (0, 1)");
    }
    if n == 0 {
        return input("need at least one thinning");
    }
    mark_masses(p, c, d)?;
    check_lags(r, t)?;
    p.window().erode(r[r.len() - 1], t[t.len() - 1])?;
    let one = |k: usize| -> Result<Option<KSurface>> {
        let thinned = p.thin(retention, derive_seed(seed, k as u64))?;
        let has = |s: &MarkSet| thinned.points().iter().any(|q| s.contains(q.mark));
        if !has(c) || !has(d) {
            return Ok(None);
        }
        let w = builder.build(&thinned, retention)?;
        k_inhom(&thinned, c, d, r, t, &w, opts).map(Some)
    };
    let parts = par_map(n, one);
    let cells = r.len() * t.len();
    let mut sum = vec![0.0; cells];
    let mut all = Vec::with_capacity(n);
    let mut report = QualityReport::default();
    for (k, part) in parts.into_iter().enumerate() {
        match part.map_err(|e| Error::Replicate {
            index: k,
            source: Box::new(e),
        })? {
            Some(s) => {
                report.absorb(&s.report);
                all.push(s.values);
            }
            None => {
                report.degenerate_thinnings += 1;
                all.push(vec![0.0; cells]);
            }
        }
    }
    for v in &all {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let spread = (0..cells)
        .map(|cell| {
            if n < 2 {
                return 0.0;
            }
            let ss: f64 = all
                .iter()
                .map(|v| (v[cell] - mean[cell]) * (v[cell] - mean[cell]))
                .sum();
            libm::sqrt(ss / (n - 1) as f64)
        })
        .collect();
    if report.degenerate_thinnings > 0 {
        report.warnings.push(format!(
            "{} thinning(s) without C- or D-points contributed 0",
            report.degenerate_thinnings
        ));
    }
    Ok(KSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values: mean,
        c: c.clone(),
        d: d.clone(),
        scenario: Some(opts.scenario),
        weights_source: Some(WeightsSource::Smoothed { n, retention }),
        dim: p.dim(),
        spread: Some(spread),
        report,
    })
}
