//! Uniform space-time bucket grid for fixed-range pair search.

use alloc::vec;
use alloc::vec::Vec;

use crate::pattern::MarkedPattern;

/// Buckets at least `r_max` wide in space and `t_max` wide in time, so that
/// every pair within range lies in adjacent buckets.
#[derive(Debug, Clone)]
pub(crate) struct PairIndex {
    lo: Vec<f64>,
    len: Vec<f64>,
    counts: Vec<usize>,
    starts: Vec<usize>,
    items: Vec<usize>,
}

// Guards against a point at exactly the search range landing two buckets away.
const WIDTH_MARGIN: f64 = 1.000_001;

impl PairIndex {
    pub fn new(p: &MarkedPattern, r_max: f64, t_max: f64) -> Self {
        let w = p.window();
        let dims = w.dim() + 1;
        let n = p.len();
        let cap = (libm::ceil(libm::pow(n.max(1) as f64, 1.0 / dims as f64)) as usize * 2).max(1);
        let axes: Vec<(f64, f64, f64)> = w
            .spatial
            .iter()
            .map(|iv| (iv.lo, iv.len(), r_max))
            .chain(core::iter::once((w.temporal.lo, w.temporal.len(), t_max)))
            .collect();
        let counts: Vec<usize> = axes
            .iter()
            .map(|&(_, len, size)| {
                let k = if size > 0.0 {
                    libm::floor(len / (size * WIDTH_MARGIN))
                } else {
                    f64::INFINITY
                };
                if k.is_finite() {
                    (k as usize).clamp(1, cap)
                } else {
                    cap
                }
            })
            .collect();
        let mut index = Self {
            lo: axes.iter().map(|a| a.0).collect(),
            len: axes.iter().map(|a| a.1).collect(),
            counts,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let total: usize = index.counts.iter().product();
        let cell_of: Vec<usize> = p
            .points()
            .iter()
            .map(|pt| {
                let c = index.coords(&pt.loc.x, pt.loc.t);
                index.flat(&c)
            })
            .collect();
        let mut starts = vec![0usize; total + 1];
        for &c in &cell_of {
            starts[c + 1] += 1;
        }
        for k in 0..total {
            starts[k + 1] += starts[k];
        }
        let mut fill = starts.clone();
        let mut items = vec![0usize; n];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        index.starts = starts;
        index.items = items;
        index
    }

    fn coords(&self, x: &[f64], t: f64) -> Vec<usize> {
        x.iter()
            .copied()
            .chain(core::iter::once(t))
            .enumerate()
            .map(|(k, v)| {
                let f = libm::floor((v - self.lo[k]) / self.len[k] * self.counts[k] as f64);
                (f.max(0.0) as usize).min(self.counts[k] - 1)
            })
            .collect()
    }

    fn flat(&self, c: &[usize]) -> usize {
        let mut id = 0;
        for k in (0..c.len()).rev() {
            id = id * self.counts[k] + c[k];
        }
        id
    }

    /// All points in the buckets adjacent to `(x, t)`, ascending.
    pub fn candidates(&self, x: &[f64], t: f64, out: &mut Vec<usize>) {
        out.clear();
        let centre = self.coords(x, t);
        let dims = centre.len();
        let lo: Vec<usize> = centre.iter().map(|&c| c.saturating_sub(1)).collect();
        let hi: Vec<usize> = centre
            .iter()
            .zip(&self.counts)
            .map(|(&c, &n)| (c + 1).min(n - 1))
            .collect();
        let mut cur = lo.clone();
        loop {
            let id = self.flat(&cur);
            out.extend_from_slice(&self.items[self.starts[id]..self.starts[id + 1]]);
            let mut k = 0;
            loop {
                if k == dims {
                    out.sort_unstable();
                    return;
                }
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = lo[k];
                k += 1;
            }
        }
    }
}
