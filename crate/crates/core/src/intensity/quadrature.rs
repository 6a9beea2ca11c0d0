//! Product-grid quadrature of Voronoi cell measures.
//!
//! Nodes are processed in blocks. For a block, a generator can own a node
//! only if its minimum distance to the block's bounding box does not exceed
//! the smallest maximum distance of any generator, so each node is tested
//! against that short candidate list only.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::index::{KdTree, Metric};

/// Nodes and weights along one axis.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Axis {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    /// Cell edges for axes that can be subdivided.
    pub edges: Option<Vec<f64>>,
}

impl Axis {
    /// `n` midpoint nodes on `[lo, hi]`, each weighted by width times `density`.
    pub fn uniform(lo: f64, hi: f64, n: usize, density: f64) -> Self {
        let h = (hi - lo) / n as f64;
        let edges: Vec<f64> = (0..=n).map(|k| lo + h * k as f64).collect();
        let centers = (0..n).map(|k| 0.5 * (edges[k] + edges[k + 1])).collect();
        Self {
            centers,
            weights: vec![h * density; n],
            edges: Some(edges),
        }
    }

    /// Point masses, sorted by position.
    pub fn atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            centers: atoms.iter().map(|a| a.0).collect(),
            weights: atoms.iter().map(|a| a.1).collect(),
            edges: None,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CellMeasures {
    pub measure: Vec<f64>,
    pub refine_factor: Option<usize>,
}

fn odometer(idx: &mut [usize], lens: &[usize]) -> bool {
    for (i, l) in idx.iter_mut().zip(lens) {
        *i += 1;
        if *i < *l {
            return true;
        }
        *i = 0;
    }
    false
}

fn block_sizes(axes: &[Axis], n_gen: usize) -> Vec<usize> {
    let d = axes.len() as f64;
    let frac = libm::pow(1.0 / n_gen.max(1) as f64, 1.0 / d);
    axes.iter()
        .map(|a| (libm::round(0.5 * a.len() as f64 * frac) as usize).clamp(1, a.len().max(1)))
        .collect()
}

// Owner sums for one block of nodes.
fn process_block(
    tree: &KdTree,
    metric: Metric,
    axes: &[Axis],
    start: &[usize],
    end: &[usize],
    scratch: &mut Vec<(f64, usize)>,
) -> Vec<(usize, f64, usize)> {
    let d = axes.len();
    let lo: Vec<f64> = (0..d).map(|k| axes[k].centers[start[k]]).collect();
    let hi: Vec<f64> = (0..d).map(|k| axes[k].centers[end[k] - 1]).collect();
    let n = tree.len();
    let mut u = f64::INFINITY;
    for i in 0..n {
        u = u.min(metric.box_max(tree.point(i), &lo, &hi));
    }
    scratch.clear();
    for i in 0..n {
        let m = metric.box_min(tree.point(i), &lo, &hi);
        if m <= u {
            scratch.push((m, i));
        }
    }
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cand_pts: Vec<f64> = scratch
        .iter()
        .flat_map(|&(_, i)| tree.point(i).iter().copied())
        .collect();
    let mut sums = vec![0.0; scratch.len()];
    let mut counts = vec![0usize; scratch.len()];
    let lens: Vec<usize> = (0..d).map(|k| end[k] - start[k]).collect();
    let mut off = vec![0usize; d];
    let mut q = vec![0.0; d];
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let j = start[k] + off[k];
            q[k] = axes[k].centers[j];
            w *= axes[k].weights[j];
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut best_slot = usize::MAX;
        let row = |slot: usize| &cand_pts[slot * d..(slot + 1) * d];
        for (slot, &(mn, i)) in scratch.iter().enumerate() {
            if mn > best.0 {
                break;
            }
            let c = (metric.dist(&q, row(slot)), i);
            let inc = (best_slot != usize::MAX).then(|| row(best_slot));
            if metric.beats(&q, c, row(slot), best, inc) {
                best = c;
                best_slot = slot;
            }
        }
        sums[best_slot] += w;
        counts[best_slot] += 1;
        if !odometer(&mut off, &lens) {
            break;
        }
    }
    scratch
        .iter()
        .zip(sums.into_iter().zip(counts))
        .filter(|(_, (_, c))| *c > 0)
        .map(|(&(_, i), (s, c))| (i, s, c))
        .collect()
}

fn block_ranges(axes: &[Axis], sizes: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let d = axes.len();
    let counts: Vec<usize> = (0..d).map(|k| axes[k].len().div_ceil(sizes[k])).collect();
    let mut out = Vec::new();
    let mut b = vec![0usize; d];
    loop {
        let start: Vec<usize> = (0..d).map(|k| b[k] * sizes[k]).collect();
        let end: Vec<usize> = (0..d)
            .map(|k| ((b[k] + 1) * sizes[k]).min(axes[k].len()))
            .collect();
        out.push((start, end));
        if !odometer(&mut b, &counts) {
            break;
        }
    }
    out
}

/// Measure of every generator's cell under the product quadrature.
pub(crate) fn cell_measures(tree: &KdTree, axes: &[Axis], refine: bool) -> Result<CellMeasures> {
    let n = tree.len();
    let metric = tree.metric();
    let sizes = block_sizes(axes, n);
    let blocks = block_ranges(axes, &sizes);
    let run = |(s, e): &(Vec<usize>, Vec<usize>)| {
        let mut scratch = Vec::new();
        process_block(tree, metric, axes, s, e, &mut scratch)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<(usize, f64, usize)>> = {
        use rayon::prelude::*;
        blocks.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<(usize, f64, usize)>> = blocks.iter().map(run).collect();
    let mut measure = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for part in parts {
        for (i, s, c) in part {
            measure[i] += s;
            counts[i] += c;
        }
    }
    let empty = counts.iter().filter(|&&c| c == 0).count();
    if !refine {
        return if empty == 0 {
            Ok(CellMeasures {
                measure,
                refine_factor: None,
            })
        } else {
            Err(Error::QuadratureTooCoarse { empty })
        };
    }
    let targets: Vec<usize> = (0..n).filter(|&g| counts[g] < MIN_CELL_NODES).collect();
    if targets.is_empty() {
        return Ok(CellMeasures {
            measure,
            refine_factor: None,
        });
    }
    let cont = axes.iter().filter(|a| a.edges.is_some()).count() as u32;
    let region = refine_region(tree, axes, &targets);
    let mut best: Option<CellMeasures> = None;
    let mut factor = 4usize;
    while cont > 0 && region.len().saturating_mul(factor.saturating_pow(cont)) <= REFINE_NODE_CAP {
        let (m, fine_counts) = refine_locally(tree, axes, &region, &measure, &counts, factor);
        let resolved = targets.iter().all(|&g| fine_counts[g] >= MIN_CELL_NODES);
        let nonempty = fine_counts.iter().all(|&c| c > 0);
        if nonempty {
            best = Some(CellMeasures {
                measure: m,
                refine_factor: Some(factor),
            });
        }
        if resolved {
            break;
        }
        factor *= 4;
    }
    match best {
        Some(cm) => Ok(cm),
        None if empty == 0 => Ok(CellMeasures {
            measure,
            refine_factor: None,
        }),
        None => Err(Error::QuadratureTooCoarse { empty }),
    }
}

/// Cells with fewer nodes are refined locally.
const MIN_CELL_NODES: usize = 16;
const REFINE_HALF_WIDTH: usize = 2;
const REFINE_NODE_CAP: usize = 20_000_000;

// Coarse nodes within `REFINE_HALF_WIDTH` of every target generator.
fn refine_region(tree: &KdTree, axes: &[Axis], targets: &[usize]) -> Vec<Vec<usize>> {
    let d = axes.len();
    let mut region: BTreeSet<Vec<usize>> = BTreeSet::new();
    for &g in targets {
        let p = tree.point(g);
        let mut ranges = Vec::with_capacity(d);
        for (k, ax) in axes.iter().enumerate() {
            match &ax.edges {
                Some(edges) => {
                    let j = edges
                        .partition_point(|&e| e <= p[k])
                        .saturating_sub(1)
                        .min(ax.len() - 1);
                    ranges.push((
                        j.saturating_sub(REFINE_HALF_WIDTH),
                        (j + REFINE_HALF_WIDTH + 1).min(ax.len()),
                    ));
                }
                None => {
                    let j = (0..ax.len())
                        .min_by(|&a, &b| {
                            libm::fabs(ax.centers[a] - p[k])
                                .total_cmp(&libm::fabs(ax.centers[b] - p[k]))
                        })
                        .unwrap_or(0);
                    ranges.push((j, j + 1));
                }
            }
        }
        let rl: Vec<usize> = ranges.iter().map(|r| r.1 - r.0).collect();
        let mut off = vec![0usize; d];
        loop {
            region.insert((0..d).map(|k| ranges[k].0 + off[k]).collect());
            if !odometer(&mut off, &rl) {
                break;
            }
        }
    }
    region.into_iter().collect()
}

// Replaces the region's coarse nodes by `factor`-times finer ones along continuous axes.
// Returns measures and node counts in units of fine nodes.
fn refine_locally(
    tree: &KdTree,
    axes: &[Axis],
    region: &[Vec<usize>],
    base: &[f64],
    base_counts: &[usize],
    factor: usize,
) -> (Vec<f64>, Vec<usize>) {
    let d = axes.len();
    let cont = axes.iter().filter(|a| a.edges.is_some()).count() as u32;
    let per_node = factor.pow(cont);
    let mut measure = base.to_vec();
    let mut counts: Vec<usize> = base_counts.iter().map(|&c| c * per_node).collect();
    let sub: Vec<usize> = axes
        .iter()
        .map(|a| if a.edges.is_some() { factor } else { 1 })
        .collect();
    let mut q = vec![0.0; d];
    let mut seed = 0usize;
    for node in region {
        let mut w = 1.0;
        for k in 0..d {
            q[k] = axes[k].centers[node[k]];
            w *= axes[k].weights[node[k]];
        }
        let (_, owner) = tree.nearest(&q, Some(seed));
        measure[owner] -= w;
        counts[owner] -= per_node;
        seed = owner;
        let wf = w / per_node as f64;
        let mut off = vec![0usize; d];
        loop {
            for k in 0..d {
                q[k] = match &axes[k].edges {
                    Some(e) => {
                        let (a, b) = (e[node[k]], e[node[k] + 1]);
                        a + (b - a) * (off[k] as f64 + 0.5) / factor as f64
                    }
                    None => axes[k].centers[node[k]],
                };
            }
            let (_, owner) = tree.nearest(&q, Some(seed));
            measure[owner] += wf;
            counts[owner] += 1;
            seed = owner;
            if !odometer(&mut off, &sub) {
                break;
            }
        }
    }
    (measure, counts)
}
