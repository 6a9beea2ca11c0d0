//! Product metrics and a k-d tree for nearest-generator queries.

use alloc::vec::Vec;
use core::cmp::Ordering;

/// Metric on `R^dims`: Euclidean over the first `euclid` axes, maximum with
/// the remaining axes, optionally plus `|delta|` on the last axis.
///
/// Equal distances are ordered by the component gaps sorted in decreasing
/// order (the Euclidean block counting as one component), then by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metric {
    pub dims: usize,
    pub euclid: usize,
    pub additive_last: bool,
}

impl Metric {
    pub fn euclidean(dims: usize) -> Self {
        Self {
            dims,
            euclid: dims,
            additive_last: false,
        }
    }

    pub fn maximum(dims: usize) -> Self {
        Self {
            dims,
            euclid: 0,
            additive_last: false,
        }
    }

    /// Distance given per-axis absolute differences.
    #[inline]
    pub fn combine(&self, gaps: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.euclid {
            let g = gaps(k);
            s += g * g;
        }
        let mut m = if self.euclid > 0 { libm::sqrt(s) } else { 0.0 };
        let end = if self.additive_last {
            self.dims - 1
        } else {
            self.dims
        };
        for k in self.euclid..end {
            m = m.max(gaps(k));
        }
        if self.additive_last {
            m + gaps(self.dims - 1)
        } else {
            m
        }
    }

    #[inline]
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.combine(|k| libm::fabs(a[k] - b[k]))
    }

    /// Orders `a` and `b` as seen from `q` when their distances are equal.
    pub fn tie_cmp(&self, q: &[f64], a: &[f64], b: &[f64]) -> Ordering {
        let ga = self.gaps_desc(q, a);
        let gb = self.gaps_desc(q, b);
        let n = self.components();
        for k in 0..n {
            match ga[k].total_cmp(&gb[k]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }

    fn components(&self) -> usize {
        self.dims - self.euclid + usize::from(self.euclid > 0)
    }

    fn gaps_desc(&self, q: &[f64], a: &[f64]) -> [f64; MAX_COMPONENTS] {
        let mut g = [0.0; MAX_COMPONENTS];
        let mut n = 0;
        if self.euclid > 0 {
            let s: f64 = (0..self.euclid)
                .map(|k| (q[k] - a[k]) * (q[k] - a[k]))
                .sum();
            g[0] = libm::sqrt(s);
            n = 1;
        }
        for k in self.euclid..self.dims {
            g[n] = libm::fabs(q[k] - a[k]);
            n += 1;
        }
        g[..n].sort_by(|x, y| y.total_cmp(x));
        g
    }

    /// Whether `(d, i)` at `a` beats the incumbent `(bd, j)` at `b`.
    #[inline]
    pub(crate) fn beats(
        &self,
        q: &[f64],
        (d, i): (f64, usize),
        a: &[f64],
        (bd, j): (f64, usize),
        b: Option<&[f64]>,
    ) -> bool {
        if d < bd {
            return true;
        }
        if d > bd || d.is_nan() {
            return false;
        }
        match b {
            None => true,
            Some(b) => match self.tie_cmp(q, a, b) {
                Ordering::Less => true,
                Ordering::Equal => i < j,
                Ordering::Greater => false,
            },
        }
    }

    /// Lower bound of the distance from `q` to any point of the box.
    #[inline]
    pub fn box_min(&self, q: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        self.combine(|k| (lo[k] - q[k]).max(q[k] - hi[k]).max(0.0))
    }

    /// Upper bound of the distance from `q` to any point of the box.
    #[inline]
    pub fn box_max(&self, q: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        self.combine(|k| libm::fabs(q[k] - lo[k]).max(libm::fabs(q[k] - hi[k])))
    }
}

const MAX_COMPONENTS: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

const LEAF: usize = 8;

/// Static k-d tree over point-major coordinates.
#[derive(Debug, Clone)]
pub struct KdTree {
    metric: Metric,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(coords: Vec<f64>, metric: Metric) -> Self {
        let dims = metric.dims;
        assert!(dims - metric.euclid < MAX_COMPONENTS, "too many axes");
        let n = coords.len().checked_div(dims).unwrap_or(0);
        let mut tree = Self {
            metric,
            coords,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.metric.dims;
        &self.coords[i * d..(i + 1) * d]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let d = self.metric.dims;
        let mut lo = alloc::vec![f64::INFINITY; d];
        let mut hi = alloc::vec![f64::NEG_INFINITY; d];
        for &i in &self.order[start..end] {
            for k in 0..d {
                let v = self.coords[i * d + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo: lo.clone(),
            hi: hi.clone(),
            start,
            end,
            children: None,
        });
        if end - start > LEAF {
            let axis = (0..d)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap_or(0);
            if hi[axis] > lo[axis] {
                let mid = (start + end) / 2;
                let coords = &self.coords;
                self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                    coords[a * d + axis]
                        .total_cmp(&coords[b * d + axis])
                        .then(a.cmp(&b))
                });
                let l = self.build(start, mid);
                let r = self.build(mid, end);
                self.nodes[id].children = Some((l, r));
            }
        }
        id
    }

    /// Nearest point under the metric's tie order. `seed` is a known candidate.
    pub fn nearest(&self, q: &[f64], seed: Option<usize>) -> (f64, usize) {
        let mut best = match seed {
            Some(i) => (self.metric.dist(q, self.point(i)), i),
            None => (f64::INFINITY, usize::MAX),
        };
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack: Vec<(f64, usize)> = Vec::with_capacity(64);
        stack.push((0.0, 0));
        while let Some((bound, id)) = stack.pop() {
            if bound > best.0 {
                continue;
            }
            let node = &self.nodes[id];
            match node.children {
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let cand = (self.metric.dist(q, self.point(i)), i);
                        let inc = (best.1 != usize::MAX).then(|| self.point(best.1));
                        if self.metric.beats(q, cand, self.point(i), best, inc) {
                            best = cand;
                        }
                    }
                }
                Some((l, r)) => {
                    let bl = self.metric.box_min(q, &self.nodes[l].lo, &self.nodes[l].hi);
                    let br = self.metric.box_min(q, &self.nodes[r].lo, &self.nodes[r].hi);
                    if bl <= br {
                        stack.push((br, r));
                        stack.push((bl, l));
                    } else {
                        stack.push((bl, l));
                        stack.push((br, r));
                    }
                }
            }
        }
        best
    }

    /// Indices within distance `radius` (closed), ascending.
    pub fn within(&self, q: &[f64], radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = alloc::vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if self.metric.box_min(q, &node.lo, &node.hi) > radius {
                continue;
            }
            match node.children {
                None => {
                    for &i in &self.order[node.start..node.end] {
                        if self.metric.dist(q, self.point(i)) <= radius {
                            out.push(i);
                        }
                    }
                }
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        out.sort_unstable();
    }
}
