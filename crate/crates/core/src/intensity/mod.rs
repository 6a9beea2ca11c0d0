//! Adaptive Voronoi intensity estimators on space-time(-mark) domains.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{KdTree, Metric};
use crate::pattern::{MarkReference, MarkSpace, MarkedPattern};

mod quadrature;

use quadrature::{cell_measures, Axis};

/// Lower bound applied to every returned intensity value.
pub const INTENSITY_FLOOR: f64 = 1e-12;

/// Quadrature resolution for cell measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    /// Nodes per spatial axis and along time.
    pub ground_nodes: usize,
    /// Nodes along a continuous mark axis.
    pub mark_nodes: usize,
    /// Locally refine around generators whose cell received no node.
    pub refine: bool,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            ground_nodes: 100,
            mark_nodes: 50,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// `max(|x - y|, |t - s|)` on space-time.
    SupSpaceTime,
    /// Space-time-mark metric of the pattern's mark space.
    FullMarked,
    /// Euclidean on the (time, mark) plane.
    EuclideanTimeMark,
    /// `max(|t - s|, |m - k|)` on the (time, mark) plane.
    MaxTimeMark,
    Euclidean1D,
    EuclideanSpatial,
}

/// Piecewise-constant estimate `multiplicity / measure(cell)`.
#[derive(Debug)]
pub struct VoronoiEstimate {
    mode: MetricMode,
    tree: KdTree,
    mult: Vec<usize>,
    measure: Vec<f64>,
    point_gen: Vec<usize>,
    refine_factor: Option<usize>,
    floor_hits: AtomicUsize,
}

// Collapses exactly coincident coordinates; generator ids follow first appearance.
fn dedupe(coords: &[f64], dims: usize) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let n = coords.len() / dims;
    let row = |i: usize| &coords[i * dims..(i + 1) * dims];
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        row(a)
            .iter()
            .zip(row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rep = vec![0usize; n];
    let mut k = 0;
    while k < n {
        let mut j = k + 1;
        while j < n && row(idx[j]) == row(idx[k]) {
            j += 1;
        }
        for &i in &idx[k..j] {
            rep[i] = idx[k];
        }
        k = j;
    }
    let mut gen_of_rep = vec![usize::MAX; n];
    let mut uniq = Vec::new();
    let mut mult = Vec::new();
    let mut point_gen = vec![0usize; n];
    for i in 0..n {
        let r = rep[i];
        if gen_of_rep[r] == usize::MAX {
            gen_of_rep[r] = mult.len();
            mult.push(0);
            uniq.extend_from_slice(row(r));
        }
        point_gen[i] = gen_of_rep[r];
        mult[gen_of_rep[r]] += 1;
    }
    (uniq, mult, point_gen)
}

impl VoronoiEstimate {
    fn build(
        mode: MetricMode,
        metric: Metric,
        coords: Vec<f64>,
        axes: &[Axis],
        refine: bool,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let (uniq, mult, point_gen) = dedupe(&coords, metric.dims);
        let tree = KdTree::new(uniq, metric);
        let cm = cell_measures(&tree, axes, refine)?;
        Ok(Self {
            mode,
            tree,
            mult,
            measure: cm.measure,
            point_gen,
            refine_factor: cm.refine_factor,
            floor_hits: AtomicUsize::new(0),
        })
    }

    // Exact cells of distinct values on an interval.
    fn build_1d(values: Vec<f64>, lo: f64, hi: f64, density: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let (uniq, mult, point_gen) = dedupe(&values, 1);
        let mut order: Vec<usize> = (0..uniq.len()).collect();
        order.sort_by(|&a, &b| uniq[a].total_cmp(&uniq[b]));
        let mut measure = vec![0.0; uniq.len()];
        for (s, &g) in order.iter().enumerate() {
            let left = if s == 0 {
                lo
            } else {
                0.5 * (uniq[order[s - 1]] + uniq[g])
            };
            let right = if s + 1 == order.len() {
                hi
            } else {
                0.5 * (uniq[g] + uniq[order[s + 1]])
            };
            measure[g] = (right.min(hi) - left.max(lo)).max(0.0) * density;
        }
        if let Some(empty) = Some(measure.iter().filter(|&&m| m <= 0.0).count()).filter(|&e| e > 0)
        {
            return Err(Error::QuadratureTooCoarse { empty });
        }
        Ok(Self {
            mode: MetricMode::Euclidean1D,
            tree: KdTree::new(uniq, Metric::euclidean(1)),
            mult,
            measure,
            point_gen,
            refine_factor: None,
            floor_hits: AtomicUsize::new(0),
        })
    }

    pub fn mode(&self) -> MetricMode {
        self.mode
    }

    pub fn n_generators(&self) -> usize {
        self.mult.len()
    }

    pub fn n_points(&self) -> usize {
        self.point_gen.len()
    }

    /// Refinement factor used if some cells needed local refinement.
    pub fn refine_factor(&self) -> Option<usize> {
        self.refine_factor
    }

    pub fn floor_hits(&self) -> usize {
        self.floor_hits.load(Ordering::Relaxed)
    }

    /// Measure of the cell owning data point `i`.
    pub fn cell_measure_of_point(&self, i: usize) -> f64 {
        self.measure[self.point_gen[i]]
    }

    /// Sum of all cell measures.
    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    fn floored(&self, v: f64) -> f64 {
        if v < INTENSITY_FLOOR || v.is_nan() {
            self.floor_hits.fetch_add(1, Ordering::Relaxed);
            INTENSITY_FLOOR
        } else {
            v
        }
    }

    fn gen_value(&self, g: usize) -> f64 {
        self.mult[g] as f64 / self.measure[g]
    }

    /// Estimate at coordinates in this estimator's own space.
    pub fn eval(&self, q: &[f64]) -> f64 {
        let mut hint = 0;
        self.eval_hinted(q, &mut hint)
    }

    /// As [`eval`](Self::eval), seeding the search with a nearby generator.
    pub fn eval_hinted(&self, q: &[f64], hint: &mut usize) -> f64 {
        let (_, g) = self
            .tree
            .nearest(q, Some((*hint).min(self.n_generators() - 1)));
        *hint = g;
        self.floored(self.gen_value(g))
    }

    /// Estimate at data point `i` (its own cell).
    pub fn at_point(&self, i: usize) -> f64 {
        self.floored(self.gen_value(self.point_gen[i]))
    }
}

fn ground_axes(p: &MarkedPattern, q: &Quadrature) -> Vec<Axis> {
    let w = p.window();
    w.spatial
        .iter()
        .chain(core::iter::once(&w.temporal))
        .map(|iv| Axis::uniform(iv.lo, iv.hi, q.ground_nodes, 1.0))
        .collect()
}

fn mark_axis(p: &MarkedPattern, q: &Quadrature) -> Axis {
    match p.mark_space() {
        MarkSpace::Interval { lo, hi, reference } => match reference {
            MarkReference::Lebesgue => Axis::uniform(*lo, *hi, q.mark_nodes, 1.0),
            MarkReference::NormalizedLebesgue => {
                Axis::uniform(*lo, *hi, q.mark_nodes, 1.0 / (hi - lo))
            }
            MarkReference::Empirical => empirical_atoms(p),
        },
        MarkSpace::Labels { weights } => Axis::atoms(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| ((i + 1) as f64, w))
                .collect(),
        ),
    }
}

fn empirical_atoms(p: &MarkedPattern) -> Axis {
    let mut marks = p.marks();
    marks.sort_by(f64::total_cmp);
    let n = marks.len() as f64;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for m in marks {
        match atoms.last_mut() {
            Some(last) if last.0 == m => last.1 += 1.0 / n,
            _ => atoms.push((m, 1.0 / n)),
        }
    }
    Axis::atoms(atoms)
}

fn ground_coords(p: &MarkedPattern) -> Vec<f64> {
    p.points()
        .iter()
        .flat_map(|pt| pt.loc.x.iter().copied().chain(core::iter::once(pt.loc.t)))
        .collect()
}

/// Space-time Voronoi estimate of the ground intensity under the sup metric.
pub fn voronoi_ground(p: &MarkedPattern, q: &Quadrature) -> Result<VoronoiEstimate> {
    let d = p.dim();
    let metric = Metric {
        dims: d + 1,
        euclid: d,
        additive_last: false,
    };
    VoronoiEstimate::build(
        MetricMode::SupSpaceTime,
        metric,
        ground_coords(p),
        &ground_axes(p, q),
        q.refine,
    )
}

/// Space-time-mark Voronoi estimate under the full metric and `l x nu`.
pub fn voronoi_marked(p: &MarkedPattern, q: &Quadrature) -> Result<VoronoiEstimate> {
    let d = p.dim();
    let metric = Metric {
        dims: d + 2,
        euclid: d,
        additive_last: p.mark_space().is_labels(),
    };
    let coords: Vec<f64> = p
        .points()
        .iter()
        .flat_map(|pt| pt.loc.x.iter().copied().chain([pt.loc.t, pt.mark]))
        .collect();
    let mut axes = ground_axes(p, q);
    axes.push(mark_axis(p, q));
    VoronoiEstimate::build(MetricMode::FullMarked, metric, coords, &axes, q.refine)
}

/// Euclidean Voronoi estimate of the spatial projection.
pub fn voronoi_spatial(p: &MarkedPattern, q: &Quadrature) -> Result<VoronoiEstimate> {
    let d = p.dim();
    let w = p.window();
    if d == 1 {
        let xs = p.points().iter().map(|pt| pt.loc.x[0]).collect();
        let mut e = VoronoiEstimate::build_1d(xs, w.spatial[0].lo, w.spatial[0].hi, 1.0)?;
        e.mode = MetricMode::EuclideanSpatial;
        return Ok(e);
    }
    let coords = p
        .points()
        .iter()
        .flat_map(|pt| pt.loc.x.iter().copied())
        .collect();
    let axes: Vec<Axis> = w
        .spatial
        .iter()
        .map(|iv| Axis::uniform(iv.lo, iv.hi, q.ground_nodes, 1.0))
        .collect();
    VoronoiEstimate::build(
        MetricMode::EuclideanSpatial,
        Metric::euclidean(d),
        coords,
        &axes,
        q.refine,
    )
}

/// Exact one-dimensional Voronoi estimate of the temporal projection.
pub fn voronoi_temporal(p: &MarkedPattern) -> Result<VoronoiEstimate> {
    let w = p.window();
    VoronoiEstimate::build_1d(
        p.points().iter().map(|pt| pt.loc.t).collect(),
        w.temporal.lo,
        w.temporal.hi,
        1.0,
    )
}

/// One-dimensional Voronoi estimate of the mark projection with respect to `nu`.
pub fn voronoi_mark(p: &MarkedPattern, q: &Quadrature) -> Result<VoronoiEstimate> {
    let marks = p.marks();
    match p.mark_space() {
        MarkSpace::Interval {
            lo,
            hi,
            reference: MarkReference::Lebesgue,
        } => VoronoiEstimate::build_1d(marks, *lo, *hi, 1.0),
        MarkSpace::Interval {
            lo,
            hi,
            reference: MarkReference::NormalizedLebesgue,
        } => VoronoiEstimate::build_1d(marks, *lo, *hi, 1.0 / (hi - lo)),
        _ => VoronoiEstimate::build(
            MetricMode::Euclidean1D,
            Metric::euclidean(1),
            marks,
            &[mark_axis(p, q)],
            q.refine,
        ),
    }
}

/// Joint (time, mark) Voronoi estimate with respect to `l_1 x nu`.
pub fn voronoi_time_mark(
    p: &MarkedPattern,
    q: &Quadrature,
    euclidean: bool,
) -> Result<VoronoiEstimate> {
    let coords = p
        .points()
        .iter()
        .flat_map(|pt| [pt.loc.t, pt.mark])
        .collect();
    let w = p.window();
    let axes = [
        Axis::uniform(w.temporal.lo, w.temporal.hi, q.ground_nodes, 1.0),
        mark_axis(p, q),
    ];
    let (mode, metric) = if euclidean {
        (MetricMode::EuclideanTimeMark, Metric::euclidean(2))
    } else {
        (MetricMode::MaxTimeMark, Metric::maximum(2))
    };
    VoronoiEstimate::build(mode, metric, coords, &axes, q.refine)
}

/// Search hints carried between nearby evaluations.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hints([usize; 3]);

/// An intensity on space-time-mark that can be evaluated anywhere and at data points.
pub trait MarkedIntensity: Sync {
    fn eval_with(&self, x: &[f64], t: f64, m: f64, hints: &mut Hints) -> f64;

    fn eval(&self, x: &[f64], t: f64, m: f64) -> f64 {
        self.eval_with(x, t, m, &mut Hints::default())
    }

    /// Value at data point `i` of the pattern the estimate was built from.
    fn at_point(&self, i: usize) -> f64;
}

impl MarkedIntensity for VoronoiEstimate {
    fn eval_with(&self, x: &[f64], t: f64, m: f64, hints: &mut Hints) -> f64 {
        let mut q: Vec<f64> = match self.mode {
            MetricMode::SupSpaceTime => x.iter().copied().chain([t]).collect(),
            MetricMode::FullMarked => x.iter().copied().chain([t, m]).collect(),
            MetricMode::EuclideanSpatial => x.to_vec(),
            MetricMode::EuclideanTimeMark | MetricMode::MaxTimeMark => vec![t, m],
            MetricMode::Euclidean1D => vec![t],
        };
        q.truncate(self.tree.metric().dims);
        self.eval_hinted(&q, &mut hints.0[0])
    }

    fn at_point(&self, i: usize) -> f64 {
        VoronoiEstimate::at_point(self, i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparableSetup {
    /// `l_S(x) l_T(t) l_M(m) / N^2`.
    CommonMark,
    /// `(l_M(m) / N) l_g(x, t)`.
    NonSeparableCommonMark,
    /// `(l_S(x) / N)` times a joint time-mark estimate.
    TimeMark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeparableOptions {
    /// Euclidean instead of max metric for the time-mark tessellation.
    pub euclidean_tm: bool,
    /// The mark distribution is `nu` itself, so the mark factor is 1.
    pub mark_is_reference: bool,
}

/// Product-form intensity estimate.
#[derive(Debug)]
pub struct SeparableIntensity {
    setup: SeparableSetup,
    options: SeparableOptions,
    n: f64,
    spatial: Option<VoronoiEstimate>,
    temporal: Option<VoronoiEstimate>,
    mark: Option<VoronoiEstimate>,
    ground: Option<VoronoiEstimate>,
    time_mark: Option<VoronoiEstimate>,
    floor_hits: AtomicUsize,
}

/// Separable Voronoi estimate under one of the three product setups.
pub fn voronoi_separable(
    p: &MarkedPattern,
    setup: SeparableSetup,
    options: SeparableOptions,
    q: &Quadrature,
) -> Result<SeparableIntensity> {
    if p.is_empty() {
        return Err(Error::EmptyPattern);
    }
    let need_mark = !options.mark_is_reference;
    let (mut spatial, mut temporal, mut mark, mut ground, mut time_mark) =
        (None, None, None, None, None);
    match setup {
        SeparableSetup::CommonMark => {
            spatial = Some(voronoi_spatial(p, q)?);
            temporal = Some(voronoi_temporal(p)?);
            if need_mark {
                mark = Some(voronoi_mark(p, q)?);
            }
        }
        SeparableSetup::NonSeparableCommonMark => {
            ground = Some(voronoi_ground(p, q)?);
            if need_mark {
                mark = Some(voronoi_mark(p, q)?);
            }
        }
        SeparableSetup::TimeMark => {
            spatial = Some(voronoi_spatial(p, q)?);
            time_mark = Some(voronoi_time_mark(p, q, options.euclidean_tm)?);
        }
    }
    Ok(SeparableIntensity {
        setup,
        options,
        n: p.len() as f64,
        spatial,
        temporal,
        mark,
        ground,
        time_mark,
        floor_hits: AtomicUsize::new(0),
    })
}

impl SeparableIntensity {
    pub fn setup(&self) -> SeparableSetup {
        self.setup
    }

    pub fn options(&self) -> SeparableOptions {
        self.options
    }

    pub fn floor_hits(&self) -> usize {
        self.floor_hits.load(Ordering::Relaxed)
    }

    fn floored(&self, v: f64) -> f64 {
        if v < INTENSITY_FLOOR || v.is_nan() {
            self.floor_hits.fetch_add(1, Ordering::Relaxed);
            INTENSITY_FLOOR
        } else {
            v
        }
    }

    fn combine(&self, s: f64, t: f64, m: f64, g: f64, tm: f64) -> f64 {
        let n = self.n;
        let v = match self.setup {
            SeparableSetup::CommonMark => {
                if self.options.mark_is_reference {
                    s * t / n
                } else {
                    s * t * m / (n * n)
                }
            }
            SeparableSetup::NonSeparableCommonMark => {
                if self.options.mark_is_reference {
                    g
                } else {
                    m / n * g
                }
            }
            SeparableSetup::TimeMark => s / n * tm,
        };
        self.floored(v)
    }
}

impl MarkedIntensity for SeparableIntensity {
    fn eval_with(&self, x: &[f64], t: f64, m: f64, hints: &mut Hints) -> f64 {
        let h = &mut hints.0;
        let (mut h0, mut h1, mut h2) = (h[0], h[1], h[2]);
        let s = self
            .spatial
            .as_ref()
            .map_or(1.0, |e| e.eval_hinted(x, &mut h0));
        let tv = self
            .temporal
            .as_ref()
            .map_or(1.0, |e| e.eval_hinted(&[t], &mut h1));
        let mv = self
            .mark
            .as_ref()
            .map_or(1.0, |e| e.eval_hinted(&[m], &mut h2));
        let g = self.ground.as_ref().map_or(1.0, |e| {
            let q: Vec<f64> = x.iter().copied().chain([t]).collect();
            e.eval_hinted(&q, &mut h0)
        });
        let tm = self
            .time_mark
            .as_ref()
            .map_or(1.0, |e| e.eval_hinted(&[t, m], &mut h1));
        *h = [h0, h1, h2];
        self.combine(s, tv, mv, g, tm)
    }

    fn at_point(&self, i: usize) -> f64 {
        let f = |e: &Option<VoronoiEstimate>| e.as_ref().map_or(1.0, |e| e.at_point(i));
        self.combine(
            f(&self.spatial),
            f(&self.temporal),
            f(&self.mark),
            f(&self.ground),
            f(&self.time_mark),
        )
    }
}

/// Mass and Hamilton-sum diagnostics of an intensity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAudit {
    pub n_points: usize,
    /// Integral by jittered stratified Monte Carlo, independent of the quadrature grid.
    pub integral: f64,
    pub rel_error: f64,
    /// `sum_i 1 / lambda(x_i, t_i, m_i)`.
    pub hamilton_sum: f64,
    /// `[l x nu](W x M)` or `l(W)` for ground estimates.
    pub reference_measure: f64,
    pub hamilton_rel_error: f64,
    pub samples: usize,
}

/// Strata per ground axis and along a continuous mark axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditStrata {
    pub ground: usize,
    pub mark: usize,
}

impl Default for AuditStrata {
    fn default() -> Self {
        Self {
            ground: 30,
            mark: 8,
        }
    }
}

fn jittered(lo: f64, hi: f64, n: usize, k: usize, u: f64) -> f64 {
    lo + (hi - lo) * (k as f64 + u) / n as f64
}

/// Optional mark range to sample, fixed mark value, and mark weight.
type MarkNode = (Option<(f64, f64)>, f64, f64);

fn stratified_integral(
    p: &MarkedPattern,
    f: &mut dyn FnMut(&[f64], f64, f64) -> f64,
    strata: AuditStrata,
    marked: bool,
    seed: u64,
) -> (f64, usize) {
    let w = p.window();
    let d = p.dim();
    let s = strata.ground.max(1);
    let cell = w.volume() / libm::pow(s as f64, (d + 1) as f64);
    let mark_nodes: Vec<MarkNode> = if !marked {
        vec![(None, 0.0, 1.0)]
    } else {
        match p.mark_space() {
            MarkSpace::Interval { lo, hi, reference } if *reference != MarkReference::Empirical => {
                let ns = strata.mark.max(1);
                let dens = if *reference == MarkReference::Lebesgue {
                    1.0
                } else {
                    1.0 / (hi - lo)
                };
                (0..ns)
                    .map(|k| {
                        let a = lo + (hi - lo) * k as f64 / ns as f64;
                        let b = lo + (hi - lo) * (k + 1) as f64 / ns as f64;
                        (Some((a, b)), 0.0, (b - a) * dens)
                    })
                    .collect()
            }
            MarkSpace::Labels { weights } => weights
                .iter()
                .enumerate()
                .map(|(i, &wt)| (None, (i + 1) as f64, wt))
                .collect(),
            _ => {
                let ax = empirical_atoms(p);
                ax.centers
                    .iter()
                    .zip(&ax.weights)
                    .map(|(&c, &wt)| (None, c, wt))
                    .collect()
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = s.pow(d as u32 + 1);
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    let mut samples = 0;
    for (range, atom, wm) in &mark_nodes {
        for mut k in 0..total {
            for (a, iv) in w.spatial.iter().enumerate() {
                x[a] = jittered(iv.lo, iv.hi, s, k % s, rng.random());
                k /= s;
            }
            let t = jittered(w.temporal.lo, w.temporal.hi, s, k, rng.random());
            let m = match range {
                Some((a, b)) => a + (b - a) * rng.random::<f64>(),
                None => *atom,
            };
            acc += f(&x, t, m) * cell * wm;
            samples += 1;
        }
    }
    (acc, samples)
}

/// Audits a marked estimate built from `p`.
pub fn mass_audit_marked(
    p: &MarkedPattern,
    est: &dyn MarkedIntensity,
    strata: AuditStrata,
    seed: u64,
) -> MassAudit {
    let mut hints = Hints::default();
    let (integral, samples) = stratified_integral(
        p,
        &mut |x, t, m| est.eval_with(x, t, m, &mut hints),
        strata,
        true,
        seed,
    );
    let hamilton_sum: f64 = (0..p.len()).map(|i| 1.0 / est.at_point(i)).sum();
    let reference_measure = p.window().volume() * p.nu_total();
    audit(p.len(), integral, hamilton_sum, reference_measure, samples)
}

/// Audits a ground (space-time) estimate built from `p`.
pub fn mass_audit_ground(
    p: &MarkedPattern,
    est: &VoronoiEstimate,
    strata: AuditStrata,
    seed: u64,
) -> MassAudit {
    let mut hint = 0usize;
    let mut q = Vec::new();
    let (integral, samples) = stratified_integral(
        p,
        &mut |x, t, _| {
            q.clear();
            q.extend_from_slice(x);
            q.push(t);
            est.eval_hinted(&q, &mut hint)
        },
        strata,
        false,
        seed,
    );
    let hamilton_sum: f64 = (0..p.len()).map(|i| 1.0 / est.at_point(i)).sum();
    audit(
        p.len(),
        integral,
        hamilton_sum,
        p.window().volume(),
        samples,
    )
}

/// One coordinate of a factor's domain: a range with constant density, or weighted atoms.
enum AuditAxis {
    Range { lo: f64, hi: f64, density: f64 },
    Atoms(Vec<(f64, f64)>),
}

fn mark_audit_axis(p: &MarkedPattern) -> AuditAxis {
    match p.mark_space() {
        MarkSpace::Interval { lo, hi, reference } if *reference != MarkReference::Empirical => {
            let density = if *reference == MarkReference::Lebesgue {
                1.0
            } else {
                1.0 / (hi - lo)
            };
            AuditAxis::Range {
                lo: *lo,
                hi: *hi,
                density,
            }
        }
        MarkSpace::Labels { weights } => AuditAxis::Atoms(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| ((i + 1) as f64, w))
                .collect(),
        ),
        _ => {
            let ax = empirical_atoms(p);
            AuditAxis::Atoms(
                ax.centers
                    .iter()
                    .copied()
                    .zip(ax.weights.iter().copied())
                    .collect(),
            )
        }
    }
}

/// Jittered stratified integral over a product of axes with about `budget`
/// samples shared by the continuous axes.
fn factor_integral(
    axes: &[AuditAxis],
    budget: usize,
    f: &mut dyn FnMut(&[f64]) -> f64,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let n_cont = axes
        .iter()
        .filter(|a| matches!(a, AuditAxis::Range { .. }))
        .count() as f64;
    let per = if n_cont == 0.0 {
        1
    } else {
        (libm::pow(budget as f64, 1.0 / n_cont) as usize).max(1)
    };
    let sizes: Vec<usize> = axes
        .iter()
        .map(|a| match a {
            AuditAxis::Range { .. } => per,
            AuditAxis::Atoms(v) => v.len(),
        })
        .collect();
    let total: usize = sizes.iter().product();
    let mut q = vec![0.0; axes.len()];
    let mut acc = 0.0;
    for mut k in 0..total {
        let mut weight = 1.0;
        for ((a, &n), v) in axes.iter().zip(&sizes).zip(q.iter_mut()) {
            let i = k % n;
            k /= n;
            match a {
                AuditAxis::Range { lo, hi, density } => {
                    *v = jittered(*lo, *hi, n, i, rng.random());
                    weight *= (hi - lo) / n as f64 * density;
                }
                AuditAxis::Atoms(atoms) => {
                    *v = atoms[i].0;
                    weight *= atoms[i].1;
                }
            }
        }
        acc += f(&q) * weight;
    }
    (acc, total)
}

/// Audits a separable estimate factor by factor. Its integral over `W x M` is
/// the product of the factor integrals, each computed in its own low-dimensional
/// domain, which is far more precise than sampling the product.
pub fn mass_audit_separable(
    p: &MarkedPattern,
    est: &SeparableIntensity,
    strata: AuditStrata,
    seed: u64,
) -> MassAudit {
    let w = p.window();
    let budget = strata.ground.max(1).pow(p.dim() as u32 + 1) * strata.mark.max(1);
    let range = |iv: &crate::geometry::Interval| AuditAxis::Range {
        lo: iv.lo,
        hi: iv.hi,
        density: 1.0,
    };
    let spatial: Vec<AuditAxis> = w.spatial.iter().map(range).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = 0;
    let mut integrate = |e: &Option<VoronoiEstimate>, axes: Vec<AuditAxis>| -> f64 {
        let e = e.as_ref().expect("factor present for this setup");
        let mut hint = 0usize;
        let (v, n) = factor_integral(
            &axes,
            budget,
            &mut |q| e.eval_hinted(q, &mut hint),
            &mut rng,
        );
        samples += n;
        v
    };
    let n = p.len() as f64;
    let mark_total =
        |integrate: &mut dyn FnMut(&Option<VoronoiEstimate>, Vec<AuditAxis>) -> f64| {
            if est.options.mark_is_reference {
                p.nu_total()
            } else {
                integrate(&est.mark, vec![mark_audit_axis(p)]) / n
            }
        };
    let integral = match est.setup {
        SeparableSetup::CommonMark => {
            let s = integrate(&est.spatial, spatial);
            let t = integrate(&est.temporal, vec![range(&w.temporal)]);
            s * t / n * mark_total(&mut integrate)
        }
        SeparableSetup::NonSeparableCommonMark => {
            let mut axes = spatial;
            axes.push(range(&w.temporal));
            let g = integrate(&est.ground, axes);
            g * mark_total(&mut integrate)
        }
        SeparableSetup::TimeMark => {
            let s = integrate(&est.spatial, spatial);
            let tm = integrate(&est.time_mark, vec![range(&w.temporal), mark_audit_axis(p)]);
            s / n * tm
        }
    };
    let hamilton_sum: f64 = (0..p.len()).map(|i| 1.0 / est.at_point(i)).sum();
    let reference_measure = w.volume() * p.nu_total();
    audit(p.len(), integral, hamilton_sum, reference_measure, samples)
}

fn audit(
    n: usize,
    integral: f64,
    hamilton_sum: f64,
    reference_measure: f64,
    samples: usize,
) -> MassAudit {
    MassAudit {
        n_points: n,
        integral,
        rel_error: libm::fabs(integral - n as f64) / n as f64,
        hamilton_sum,
        reference_measure,
        hamilton_rel_error: libm::fabs(hamilton_sum - reference_measure) / reference_measure,
        samples,
    }
}
