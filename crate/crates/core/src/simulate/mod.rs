//! Generators: inhomogeneous Poisson, Gaussian random fields, LGCPs, marking and superposition.

use alloc::boxed::Box;
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{input, Error, Result};
use crate::geometry::{euclid, SpaceTimePoint, Window};
use crate::math::bessel_k;
use crate::pattern::{GroundPattern, MarkSpace, MarkedPattern, MarkedPoint};

pub mod presets;

pub use presets::{Preset, PresetSimulator};

/// Largest grid or point set accepted for dense factorization.
pub const DENSE_GUARD: usize = 8000;

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// One-dimensional stationary covariance factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovKind {
    /// `sigma2 2^(1-nu)/Gamma(nu) (c h)^nu K_nu(c h)`.
    WhittleMatern {
        sigma2: f64,
        nu: f64,
        c: f64,
    },
    /// `exp(-h / scale)`.
    Exponential {
        scale: f64,
    },
    Constant {
        value: f64,
    },
}

impl CovKind {
    pub fn eval(&self, h: f64) -> f64 {
        let h = libm::fabs(h);
        match *self {
            CovKind::WhittleMatern { sigma2, nu, c } => {
                let x = c * h;
                if x == 0.0 {
                    return sigma2;
                }
                if nu == 0.5 {
                    sigma2 * libm::exp(-x)
                } else if nu == 1.5 {
                    sigma2 * (1.0 + x) * libm::exp(-x)
                } else if nu == 2.5 {
                    sigma2 * (1.0 + x + x * x / 3.0) * libm::exp(-x)
                } else if x > 700.0 {
                    0.0
                } else {
                    let k = bessel_k(nu, x);
                    sigma2 * libm::pow(2.0, 1.0 - nu) / libm::tgamma(nu) * libm::pow(x, nu) * k
                }
            }
            CovKind::Exponential { scale } => libm::exp(-h / scale),
            CovKind::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CovKind::WhittleMatern { sigma2, nu, c } => {
                if !(sigma2 > 0.0 && nu > 0.0 && c >= 0.0) {
                    return input("Whittle-Matern needs sigma2 > 0, nu > 0, c >= 0");
                }
            }
            CovKind::Exponential { scale } => {
                if !(scale > 0.0) {
                    return input("exponential scale must be positive");
                }
            }
            CovKind::Constant { value } => {
                if !(value >= 0.0) {
                    return input("constant covariance must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

/// Separable space-time covariance `C_S(h) C_T(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel {
    pub spatial: CovKind,
    pub temporal: CovKind,
}

impl CovarianceModel {
    pub fn new(spatial: CovKind, temporal: CovKind) -> Result<Self> {
        spatial.validate()?;
        temporal.validate()?;
        Ok(Self { spatial, temporal })
    }

    pub fn eval(&self, h: f64, u: f64) -> f64 {
        self.spatial.eval(h) * self.temporal.eval(u)
    }
}

/// Cholesky factor with the smallest jitter from the ladder that succeeds.
pub fn cholesky_with_jitter(mut m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    let mut applied = 0.0;
    for &jitter in &JITTER_LADDER {
        for i in 0..n {
            m[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Some(ch) = m.clone().cholesky() {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Ok((l, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: applied })
}

type IntensityFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Intensity function with a known upper bound on its window.
pub struct IntensityField {
    f: IntensityFn,
    window: Window,
    lambda_max: f64,
}

impl core::fmt::Debug for IntensityField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("IntensityField")
            .field("window", &self.window)
            .field("lambda_max", &self.lambda_max)
            .finish()
    }
}

const SCAN_NODES: usize = 21;

fn grid_scan(f: &dyn Fn(&[f64], f64) -> f64, window: &Window) -> f64 {
    let d = window.dim();
    let total = SCAN_NODES.pow(d as u32 + 1);
    let mut x = vec![0.0; d];
    let mut best: f64 = 0.0;
    for mut k in 0..total {
        for (a, iv) in window.spatial.iter().enumerate() {
            x[a] = iv.lo + iv.len() * (k % SCAN_NODES) as f64 / (SCAN_NODES - 1) as f64;
            k /= SCAN_NODES;
        }
        let t = window.temporal.lo + window.temporal.len() * k as f64 / (SCAN_NODES - 1) as f64;
        best = best.max(f(&x, t));
    }
    best
}

impl IntensityField {
    /// With `lambda_max = None` the bound is a grid scan times 1.05.
    pub fn new(
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        window: Window,
        lambda_max: Option<f64>,
    ) -> Result<Self> {
        let scanned = grid_scan(&f, &window);
        if !scanned.is_finite() {
            return input("intensity is not finite on the scan grid");
        }
        let lambda_max = match lambda_max {
            Some(m) if m >= scanned => m,
            Some(m) => {
                return Err(Error::IntensityBound {
                    value: scanned,
                    bound: m,
                    t: f64::NAN,
                })
            }
            None => scanned * 1.05,
        };
        Ok(Self {
            f: Box::new(f),
            window,
            lambda_max,
        })
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.f)(x, t)
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn window(&self) -> &Window {
        &self.window
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|_| Error::Input(format!("bad Poisson mean {mean}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Inhomogeneous Poisson process by thinning a dominating homogeneous one.
pub fn sim_poisson(field: &IntensityField, seed: u64) -> Result<GroundPattern> {
    let w = &field.window;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dom = poisson_count(&mut rng, field.lambda_max * w.volume())?;
    let mut points = Vec::new();
    for _ in 0..n_dom {
        let x: Vec<f64> = w
            .spatial
            .iter()
            .map(|iv| iv.lo + iv.len() * rng.random::<f64>())
            .collect();
        let t = w.temporal.lo + w.temporal.len() * rng.random::<f64>();
        let lam = field.eval(&x, t);
        if lam > field.lambda_max {
            return Err(Error::IntensityBound {
                value: lam,
                bound: field.lambda_max,
                t,
            });
        }
        if rng.random::<f64>() * field.lambda_max < lam {
            points.push(SpaceTimePoint { x, t });
        }
    }
    Ok(GroundPattern {
        points,
        window: w.clone(),
    })
}

/// Regular grid of cells over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub window: Window,
    /// Cells per spatial axis.
    pub n_space: Vec<usize>,
    pub n_time: usize,
}

impl Grid {
    pub fn new(window: Window, n_space: Vec<usize>, n_time: usize) -> Result<Self> {
        if n_space.len() != window.dim() {
            return Err(Error::Dimension {
                expected: window.dim(),
                got: n_space.len(),
            });
        }
        if n_time == 0 || n_space.contains(&0) {
            return input("grid needs at least one cell per axis");
        }
        Ok(Self {
            window,
            n_space,
            n_time,
        })
    }

    pub fn n_spatial_cells(&self) -> usize {
        self.n_space.iter().product()
    }

    pub fn n_cells(&self) -> usize {
        self.n_spatial_cells() * self.n_time
    }

    pub fn cell_volume(&self) -> f64 {
        self.window.volume() / self.n_cells() as f64
    }

    fn spatial_center(&self, mut s: usize) -> Vec<f64> {
        self.window
            .spatial
            .iter()
            .zip(&self.n_space)
            .map(|(iv, &n)| {
                let i = s % n;
                s /= n;
                iv.lo + iv.len() * (i as f64 + 0.5) / n as f64
            })
            .collect()
    }

    fn time_center(&self, k: usize) -> f64 {
        let iv = self.window.temporal;
        iv.lo + iv.len() * (k as f64 + 0.5) / self.n_time as f64
    }

    /// Linear cell index: spatial axes first (axis 0 fastest), time slowest.
    pub fn cell_of(&self, x: &[f64], t: f64) -> usize {
        let axis = |v: f64, lo: f64, len: f64, n: usize| -> usize {
            let i = libm::floor((v - lo) / len * n as f64);
            (i.max(0.0) as usize).min(n - 1)
        };
        let mut idx = 0;
        let mut stride = 1;
        for ((iv, &n), &v) in self.window.spatial.iter().zip(&self.n_space).zip(x) {
            idx += axis(v, iv.lo, iv.len(), n) * stride;
            stride *= n;
        }
        let tv = self.window.temporal;
        idx + axis(t, tv.lo, tv.len(), self.n_time) * stride
    }

    pub fn cell_center(&self, idx: usize) -> (Vec<f64>, f64) {
        let ns = self.n_spatial_cells();
        (self.spatial_center(idx % ns), self.time_center(idx / ns))
    }

    fn cell_lower(&self, idx: usize) -> (Vec<f64>, f64) {
        let ns = self.n_spatial_cells();
        let mut s = idx % ns;
        let x = self
            .window
            .spatial
            .iter()
            .zip(&self.n_space)
            .map(|(iv, &n)| {
                let i = s % n;
                s /= n;
                iv.lo + iv.len() * i as f64 / n as f64
            })
            .collect();
        let tv = self.window.temporal;
        (x, tv.lo + tv.len() * (idx / ns) as f64 / self.n_time as f64)
    }
}

/// Field values at grid cell centres; nearest-cell lookup elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.values[self.grid.cell_of(x, t)]
    }
}

/// Reusable sampler for a Gaussian field on a grid.
///
/// The separable covariance on a product grid is `C_T (x) C_S`, so the
/// factor is `L_T (x) L_S` and a draw is `L_S E L_T^T` plus the mean.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    grid: Grid,
    mean: Vec<f64>,
    l_space: DMatrix<f64>,
    l_time: DMatrix<f64>,
    pub jitter: (f64, f64),
}

impl GrfSampler {
    pub fn new(
        mean_fn: &dyn Fn(&[f64], f64) -> f64,
        cov: &CovarianceModel,
        grid: Grid,
    ) -> Result<Self> {
        if grid.n_cells() > DENSE_GUARD {
            return input(format!(
                "grid has {} cells, above the dense factorization guard {DENSE_GUARD}",
                grid.n_cells()
            ));
        }
        let ns = grid.n_spatial_cells();
        let nt = grid.n_time;
        let centers: Vec<Vec<f64>> = (0..ns).map(|s| grid.spatial_center(s)).collect();
        let cs = DMatrix::from_fn(ns, ns, |i, j| {
            cov.spatial.eval(euclid(&centers[i], &centers[j]))
        });
        let times: Vec<f64> = (0..nt).map(|k| grid.time_center(k)).collect();
        let ct = DMatrix::from_fn(nt, nt, |i, j| cov.temporal.eval(times[i] - times[j]));
        let (l_space, js) = cholesky_with_jitter(cs)?;
        let (l_time, jt) = cholesky_with_jitter(ct)?;
        let mean = (0..grid.n_cells())
            .map(|c| {
                let (x, t) = grid.cell_center(c);
                mean_fn(&x, t)
            })
            .collect();
        Ok(Self {
            grid,
            mean,
            l_space,
            l_time,
            jitter: (js, jt),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sample(&self, seed: u64) -> GridField {
        let ns = self.grid.n_spatial_cells();
        let nt = self.grid.n_time;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = DMatrix::from_fn(ns, nt, |_, _| StandardNormal.sample(&mut rng));
        let z = &self.l_space * e * self.l_time.transpose();
        // Column-major storage matches the spatial-fastest cell order.
        let values = z.iter().zip(&self.mean).map(|(z, m)| z + m).collect();
        GridField {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// One Gaussian random field draw on `grid`.
pub fn sim_grf(
    mean_fn: &dyn Fn(&[f64], f64) -> f64,
    cov: &CovarianceModel,
    grid: Grid,
    seed: u64,
) -> Result<GridField> {
    Ok(GrfSampler::new(mean_fn, cov, grid)?.sample(seed))
}

/// Cox process driven by `exp(field)`, constant per cell.
pub fn lgcp_from_field(field: &GridField, seed: u64) -> Result<GroundPattern> {
    let grid = &field.grid;
    let vol = grid.cell_volume();
    let widths: Vec<f64> = grid
        .window
        .spatial
        .iter()
        .zip(&grid.n_space)
        .map(|(iv, &n)| iv.len() / n as f64)
        .collect();
    let tw = grid.window.temporal_length() / grid.n_time as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (c, &z) in field.values.iter().enumerate() {
        let n = poisson_count(&mut rng, libm::exp(z) * vol)?;
        if n == 0 {
            continue;
        }
        let (lo, tlo) = grid.cell_lower(c);
        for _ in 0..n {
            let x = lo
                .iter()
                .zip(&widths)
                .map(|(l, w)| l + w * rng.random::<f64>())
                .collect();
            points.push(SpaceTimePoint {
                x,
                t: tlo + tw * rng.random::<f64>(),
            });
        }
    }
    Ok(GroundPattern {
        points,
        window: grid.window.clone(),
    })
}

/// Log-Gaussian Cox process with log-intensity `mean_fn + Z`.
pub fn sim_lgcp(
    mean_fn: &dyn Fn(&[f64], f64) -> f64,
    cov: &CovarianceModel,
    grid: Grid,
    seed: u64,
) -> Result<GroundPattern> {
    let field = sim_grf(mean_fn, cov, grid, crate::math::derive_seed(seed, 0))?;
    lgcp_from_field(&field, crate::math::derive_seed(seed, 1))
}

/// Law of iid marks.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkLaw {
    /// Label 1 with probability `p`, label 2 otherwise.
    Bernoulli(f64),
    UniformInterval {
        lo: f64,
        hi: f64,
    },
    /// Label `i + 1` with probability proportional to `probs[i]`.
    UserTable(Vec<f64>),
}

impl MarkLaw {
    /// Mark space the law naturally lives on.
    pub fn default_space(&self) -> Result<MarkSpace> {
        match self {
            MarkLaw::Bernoulli(_) => MarkSpace::counting(2),
            MarkLaw::UniformInterval { lo, hi } => MarkSpace::interval(*lo, *hi),
            MarkLaw::UserTable(p) => MarkSpace::counting(p.len()),
        }
    }
}

/// Marks drawn iid independently of the locations.
pub fn assign_marks_iid(
    ground: GroundPattern,
    law: &MarkLaw,
    mark_space: MarkSpace,
    seed: u64,
) -> Result<MarkedPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ground.len();
    let marks: Vec<f64> = match law {
        MarkLaw::Bernoulli(p) => {
            if !(0.0..=1.0).contains(p) {
                return input("Bernoulli parameter must lie in [0, 1]");
            }
            (0..n)
                .map(|_| if rng.random::<f64>() < *p { 1.0 } else { 2.0 })
                .collect()
        }
        MarkLaw::UniformInterval { lo, hi } => {
            if !(lo < hi) {
                return input("uniform mark law needs lo < hi");
            }
            (0..n)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect()
        }
        MarkLaw::UserTable(probs) => {
            let total: f64 = probs.iter().sum();
            if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
                return input("mark table needs nonnegative weights with positive sum");
            }
            (0..n)
                .map(|_| {
                    let u = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return (i + 1) as f64;
                        }
                    }
                    probs.len() as f64
                })
                .collect()
        }
    };
    ground.with_marks(marks, mark_space)
}

/// Marks read off one joint Gaussian draw at the ground locations.
pub fn assign_marks_geostat(
    ground: GroundPattern,
    cov: &CovarianceModel,
    mark_space: MarkSpace,
    seed: u64,
) -> Result<MarkedPattern> {
    let n = ground.len();
    if n > DENSE_GUARD {
        return input(format!(
            "{n} points exceed the dense factorization guard {DENSE_GUARD}"
        ));
    }
    if n == 0 {
        return ground.with_marks(Vec::new(), mark_space);
    }
    let pts = &ground.points;
    let c = DMatrix::from_fn(n, n, |i, j| {
        cov.eval(euclid(&pts[i].x, &pts[j].x), pts[i].t - pts[j].t)
    });
    let (l, _) = cholesky_with_jitter(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let marks: Vec<f64> = (l * e).iter().copied().collect();
    ground.with_marks(marks, mark_space)
}

/// Union of components, the `i`-th receiving label `i + 1`.
pub fn superpose(components: &[GroundPattern], mark_space: MarkSpace) -> Result<MarkedPattern> {
    let first = components
        .first()
        .ok_or_else(|| Error::Input("no components".into()))?;
    if mark_space.n_labels() != Some(components.len()) {
        return input("mark space must have one label per component");
    }
    let mut points = Vec::new();
    for (i, c) in components.iter().enumerate() {
        if c.window != first.window {
            return input("components observed in different windows");
        }
        points.extend(c.points.iter().map(|loc| MarkedPoint {
            loc: loc.clone(),
            mark: (i + 1) as f64,
        }));
    }
    MarkedPattern::new(points, first.window.clone(), mark_space)
}

#[cfg(test)]
mod tests;
