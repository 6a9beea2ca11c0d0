//! Marked point patterns, mark spaces and mark sets.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};
use crate::geometry::{SpaceTimePoint, Window};

/// Reference measure on an interval mark space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkReference {
    Lebesgue,
    /// Lebesgue divided by the interval length.
    NormalizedLebesgue,
    /// The empirical mark distribution of the pattern at hand.
    Empirical,
}

/// Mark domain together with its reference measure.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkSpace {
    Interval {
        lo: f64,
        hi: f64,
        reference: MarkReference,
    },
    /// Labels `1..=k` with positive weights.
    Labels { weights: Vec<f64> },
}

impl MarkSpace {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::interval_with(lo, hi, MarkReference::Lebesgue)
    }

    pub fn interval_with(lo: f64, hi: f64, reference: MarkReference) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return input("mark interval requires finite lo < hi");
        }
        Ok(MarkSpace::Interval { lo, hi, reference })
    }

    /// Counting measure on `k` labels.
    pub fn counting(k: usize) -> Result<Self> {
        Self::labels(vec![1.0; k])
    }

    pub fn labels(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return input("label mark space needs at least two labels");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return input("label weights must be positive and finite");
        }
        Ok(MarkSpace::Labels { weights })
    }

    pub fn is_labels(&self) -> bool {
        matches!(self, MarkSpace::Labels { .. })
    }

    pub fn is_empirical(&self) -> bool {
        matches!(
            self,
            MarkSpace::Interval {
                reference: MarkReference::Empirical,
                ..
            }
        )
    }

    pub fn n_labels(&self) -> Option<usize> {
        match self {
            MarkSpace::Labels { weights } => Some(weights.len()),
            _ => None,
        }
    }

    pub fn is_valid(&self, m: f64) -> bool {
        match self {
            MarkSpace::Interval { lo, hi, .. } => m.is_finite() && *lo <= m && m <= *hi,
            MarkSpace::Labels { weights } => {
                m.is_finite() && libm::floor(m) == m && m >= 1.0 && m <= weights.len() as f64
            }
        }
    }

    /// `nu` of the whole space.
    pub fn total_measure(&self) -> f64 {
        match self {
            MarkSpace::Interval { lo, hi, reference } => match reference {
                MarkReference::Lebesgue => hi - lo,
                _ => 1.0,
            },
            MarkSpace::Labels { weights } => weights.iter().sum(),
        }
    }

    /// `nu(C)`; `marks` is consulted only for the empirical reference.
    pub fn measure(&self, set: &MarkSet, marks: &[f64]) -> f64 {
        match self {
            MarkSpace::Interval { lo, hi, reference } => {
                let len = match set {
                    MarkSet::Full => hi - lo,
                    MarkSet::Interval { lo: a, hi: b, .. } => (b.min(*hi) - a.max(*lo)).max(0.0),
                    MarkSet::Labels(_) => 0.0,
                };
                match reference {
                    MarkReference::Lebesgue => len,
                    MarkReference::NormalizedLebesgue => len / (hi - lo),
                    MarkReference::Empirical => {
                        if marks.is_empty() {
                            0.0
                        } else {
                            let n = marks.iter().filter(|&&m| set.contains(m)).count();
                            n as f64 / marks.len() as f64
                        }
                    }
                }
            }
            MarkSpace::Labels { weights } => weights
                .iter()
                .enumerate()
                .filter(|(i, _)| set.contains((i + 1) as f64))
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// Reference density (interval) or atom weight (labels) at `m`.
    pub fn density(&self, m: f64) -> f64 {
        match self {
            MarkSpace::Interval { lo, hi, reference } => match reference {
                MarkReference::Lebesgue => 1.0,
                MarkReference::NormalizedLebesgue => 1.0 / (hi - lo),
                MarkReference::Empirical => f64::NAN,
            },
            MarkSpace::Labels { weights } => {
                let i = m as usize;
                if i >= 1 && i <= weights.len() {
                    weights[i - 1]
                } else {
                    0.0
                }
            }
        }
    }
}

/// A Borel set of marks.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkSet {
    Interval {
        lo: f64,
        hi: f64,
        lo_closed: bool,
        hi_closed: bool,
    },
    Labels(Vec<u32>),
    Full,
}

impl MarkSet {
    pub fn closed(lo: f64, hi: f64) -> Self {
        MarkSet::Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    /// `(lo, hi]`.
    pub fn left_open(lo: f64, hi: f64) -> Self {
        MarkSet::Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: true,
        }
    }

    pub fn labels(ls: &[u32]) -> Self {
        MarkSet::Labels(ls.to_vec())
    }

    pub fn contains(&self, m: f64) -> bool {
        match self {
            MarkSet::Full => true,
            MarkSet::Interval {
                lo,
                hi,
                lo_closed,
                hi_closed,
            } => {
                let above = if *lo_closed { m >= *lo } else { m > *lo };
                let below = if *hi_closed { m <= *hi } else { m < *hi };
                above && below
            }
            MarkSet::Labels(ls) => ls.iter().any(|&l| l as f64 == m),
        }
    }
}

impl core::fmt::Display for MarkSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MarkSet::Full => write!(f, "full"),
            MarkSet::Interval {
                lo,
                hi,
                lo_closed,
                hi_closed,
            } => write!(
                f,
                "{}{},{}{}",
                if *lo_closed { '[' } else { '(' },
                lo,
                hi,
                if *hi_closed { ']' } else { ')' }
            ),
            MarkSet::Labels(ls) => {
                write!(f, "{{")?;
                for (i, l) in ls.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{l}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPoint {
    pub loc: SpaceTimePoint,
    pub mark: f64,
}

/// What lenient construction discarded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub dropped_outside: usize,
    pub dropped_invalid_mark: usize,
    pub duplicates_removed: usize,
    pub warnings: Vec<String>,
}

/// Unmarked space-time pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPattern {
    pub points: Vec<SpaceTimePoint>,
    pub window: Window,
}

impl GroundPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_marks(self, marks: Vec<f64>, mark_space: MarkSpace) -> Result<MarkedPattern> {
        if marks.len() != self.points.len() {
            return input("mark count differs from point count");
        }
        let points = self
            .points
            .into_iter()
            .zip(marks)
            .map(|(loc, mark)| MarkedPoint { loc, mark })
            .collect();
        MarkedPattern::new(points, self.window, mark_space)
    }
}

/// A finite marked point pattern observed in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPattern {
    points: Vec<MarkedPoint>,
    window: Window,
    mark_space: MarkSpace,
}

fn cmp_point(a: &MarkedPoint, b: &MarkedPoint) -> Ordering {
    a.loc
        .t
        .total_cmp(&b.loc.t)
        .then_with(|| {
            a.loc
                .x
                .iter()
                .zip(&b.loc.x)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.mark.total_cmp(&b.mark))
}

// Indices of points that repeat an earlier identical point.
fn duplicate_indices(points: &[MarkedPoint]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| cmp_point(&points[i], &points[j]).then(i.cmp(&j)));
    let mut dups: Vec<usize> = idx
        .windows(2)
        .filter(|w| cmp_point(&points[w[0]], &points[w[1]]).is_eq())
        .map(|w| w[1])
        .collect();
    dups.sort_unstable();
    dups
}

impl MarkedPattern {
    /// Strict constructor: every point must be valid and distinct.
    pub fn new(points: Vec<MarkedPoint>, window: Window, mark_space: MarkSpace) -> Result<Self> {
        let d = window.dim();
        for (i, p) in points.iter().enumerate() {
            if p.loc.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: p.loc.dim(),
                });
            }
            if !window.contains(&p.loc) {
                return input(format!("point {i} lies outside the window"));
            }
            if !mark_space.is_valid(p.mark) {
                return input(format!(
                    "point {i} has mark {} outside the mark space",
                    p.mark
                ));
            }
        }
        if !duplicate_indices(&points).is_empty() {
            return input("pattern is not simple: duplicate (location, mark)");
        }
        Ok(Self {
            points,
            window,
            mark_space,
        })
    }

    /// Lenient constructor for ingestion: drops offending rows and reports them.
    pub fn from_raw(
        points: Vec<MarkedPoint>,
        window: Window,
        mark_space: MarkSpace,
    ) -> Result<(Self, IngestReport)> {
        let d = window.dim();
        let mut report = IngestReport::default();
        let mut kept = Vec::with_capacity(points.len());
        for p in points {
            if p.loc.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: p.loc.dim(),
                });
            }
            if !window.contains(&p.loc) {
                report.dropped_outside += 1;
            } else if !mark_space.is_valid(p.mark) {
                report.dropped_invalid_mark += 1;
            } else {
                kept.push(p);
            }
        }
        let dups = duplicate_indices(&kept);
        if !dups.is_empty() {
            report.duplicates_removed = dups.len();
            report
                .warnings
                .push(format!("{} duplicate point(s) collapsed", dups.len()));
            let mut drop = dups.into_iter().peekable();
            kept = kept
                .into_iter()
                .enumerate()
                .filter(|(i, _)| {
                    if drop.peek() == Some(i) {
                        drop.next();
                        false
                    } else {
                        true
                    }
                })
                .map(|(_, p)| p)
                .collect();
        }
        if report.dropped_outside > 0 {
            report
                .warnings
                .push(format!("{} dropped outside window", report.dropped_outside));
        }
        if report.dropped_invalid_mark > 0 {
            report.warnings.push(format!(
                "{} dropped with invalid mark",
                report.dropped_invalid_mark
            ));
        }
        if kept.is_empty() {
            return Err(Error::EmptyPattern);
        }
        Ok((
            Self {
                points: kept,
                window,
                mark_space,
            },
            report,
        ))
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.points
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn mark_space(&self) -> &MarkSpace {
        &self.mark_space
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn marks(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mark).collect()
    }

    /// `nu(C)` under this pattern's mark space.
    pub fn nu(&self, set: &MarkSet) -> f64 {
        if self.mark_space.is_empirical() {
            self.mark_space.measure(set, &self.marks())
        } else {
            self.mark_space.measure(set, &[])
        }
    }

    pub fn nu_total(&self) -> f64 {
        self.nu(&MarkSet::Full)
    }

    pub fn ground(&self) -> GroundPattern {
        GroundPattern {
            points: self.points.iter().map(|p| p.loc.clone()).collect(),
            window: self.window.clone(),
        }
    }

    /// Same pattern with a replaced mark space (marks revalidated).
    pub fn with_mark_space(&self, mark_space: MarkSpace) -> Result<Self> {
        Self::new(self.points.clone(), self.window.clone(), mark_space)
    }

    /// Same locations with new marks, in point order.
    pub fn with_marks(&self, marks: &[f64]) -> Result<Self> {
        if marks.len() != self.len() {
            return input("mark count differs from point count");
        }
        let points = self
            .points
            .iter()
            .zip(marks)
            .map(|(p, &mark)| MarkedPoint {
                loc: p.loc.clone(),
                mark,
            })
            .collect();
        Self::new(points, self.window.clone(), self.mark_space.clone())
    }

    /// Scales space by `beta_s` and time by `beta_t`; marks unchanged.
    pub fn rescale(&self, beta_s: f64, beta_t: f64) -> Result<Self> {
        if !(beta_s > 0.0 && beta_t > 0.0 && beta_s.is_finite() && beta_t.is_finite()) {
            return input("rescaling factors must be positive");
        }
        let points = self
            .points
            .iter()
            .map(|p| MarkedPoint {
                loc: SpaceTimePoint {
                    x: p.loc.x.iter().map(|v| v * beta_s).collect(),
                    t: p.loc.t * beta_t,
                },
                mark: p.mark,
            })
            .collect();
        Ok(Self {
            points,
            window: self.window.scale(beta_s, beta_t),
            mark_space: self.mark_space.clone(),
        })
    }

    /// Points with mark in `set`, marks kept, order preserved.
    pub fn restrict_marks(&self, set: &MarkSet) -> Self {
        Self {
            points: self
                .points
                .iter()
                .filter(|p| set.contains(p.mark))
                .cloned()
                .collect(),
            window: self.window.clone(),
            mark_space: self.mark_space.clone(),
        }
    }

    /// Locations of points with mark in `set`.
    pub fn project_marks(&self, set: &MarkSet) -> GroundPattern {
        GroundPattern {
            points: self
                .points
                .iter()
                .filter(|p| set.contains(p.mark))
                .map(|p| p.loc.clone())
                .collect(),
            window: self.window.clone(),
        }
    }

    /// Independent thinning keeping each point with probability `retention`.
    pub fn thin(&self, retention: f64, seed: u64) -> Result<Self> {
        if !(retention > 0.0 && retention <= 1.0) {
            return input("retention must lie in (0, 1]");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = self
            .points
            .iter()
            .filter(|_| rng.random::<f64>() < retention)
            .cloned()
            .collect();
        Ok(Self {
            points,
            window: self.window.clone(),
            mark_space: self.mark_space.clone(),
        })
    }

    /// Uniformly permutes marks over the fixed locations.
    pub fn permute_marks(&self, seed: u64) -> Result<Self> {
        if self.len() < 2 {
            return input("permutation needs at least two points");
        }
        let mut marks = self.marks();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        marks.shuffle(&mut rng);
        let points: Vec<MarkedPoint> = self
            .points
            .iter()
            .zip(marks)
            .map(|(p, mark)| MarkedPoint {
                loc: p.loc.clone(),
                mark,
            })
            .collect();
        if !duplicate_indices(&points).is_empty() {
            return input("permutation produced a non-simple pattern");
        }
        Ok(Self {
            points,
            window: self.window.clone(),
            mark_space: self.mark_space.clone(),
        })
    }
}
