//! Monte-Carlo envelopes, marking-structure diagnostics and the
//! random-labelling permutation test.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input, Error, Result};
use crate::math::{derive_seed, par_map, quantile_sorted};
use crate::pattern::{MarkSet, MarkedPattern};
use crate::second_order::{
    k_ground, k_inhom, poisson_value, KOptions, KSurface, PointWeights, WeightsBuilder,
};

pub const DEFAULT_PERMUTATIONS: usize = 99;
pub const DEFAULT_ALPHA: f64 = 0.05;

pub const DISCLAIMER: &str = "Pointwise envelopes are indicative only: they are not a calibrated \
global test, and exceedances over many lags or mark sets are expected by chance.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvelopeRank {
    /// Pointwise minimum and maximum of the replicates.
    MinMax,
    /// Pointwise empirical `alpha / 2` and `1 - alpha / 2` quantiles (type 7).
    Pointwise { alpha: f64 },
}

impl EnvelopeRank {
    pub fn describe(&self) -> String {
        match self {
            EnvelopeRank::MinMax => "minmax".to_string(),
            EnvelopeRank::Pointwise { alpha } => format!("pointwise(alpha={alpha})"),
        }
    }
}

/// Pointwise band from replicated statistics together with the observed statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSet {
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub observed: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Observed strictly below `lower` or strictly above `upper`.
    pub exceeds: Vec<bool>,
    pub rank: EnvelopeRank,
    pub n_sim: usize,
    pub seed: u64,
    pub replicate_seeds: Vec<u64>,
    pub generator: String,
    pub disclaimer: &'static str,
    pub warnings: Vec<String>,
}

impl EnvelopeSet {
    pub fn at(&self, i: usize, j: usize) -> usize {
        i * self.t.len() + j
    }

    /// Fraction of lag cells where the observed statistic leaves the band.
    pub fn exceedance_fraction(&self) -> f64 {
        self.exceeds.iter().filter(|&&e| e).count() as f64 / self.exceeds.len() as f64
    }

    pub fn any_exceedance(&self) -> bool {
        self.exceeds.iter().any(|&e| e)
    }

    /// Fraction of lag cells whose band contains 0.
    pub fn zero_coverage(&self) -> f64 {
        let covered = self
            .lower
            .iter()
            .zip(&self.upper)
            .filter(|(l, u)| **l <= 0.0 && 0.0 <= **u)
            .count();
        covered as f64 / self.lower.len() as f64
    }
}

/// Pointwise bounds over replicate value vectors.
pub fn envelope_bounds(
    replicates: &[Vec<f64>],
    rank: EnvelopeRank,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = replicates.first() else {
        return input("need at least one replicate");
    };
    let cells = first.len();
    if replicates.iter().any(|v| v.len() != cells) {
        return input("replicates disagree in size");
    }
    if replicates.iter().flatten().any(|v| !v.is_finite()) {
        return input("replicate statistics must be finite");
    }
    if let EnvelopeRank::Pointwise { alpha } = rank {
        if !(alpha > 0.0 && alpha < 1.0) {
            return input("alpha must lie in (0, 1)");
        }
    }
    let mut lower = Vec::with_capacity(cells);
    let mut upper = Vec::with_capacity(cells);
    let mut column = Vec::with_capacity(replicates.len());
    for c in 0..cells {
        column.clear();
        column.extend(replicates.iter().map(|v| v[c]));
        column.sort_by(f64::total_cmp);
        let (lo, hi) = match rank {
            EnvelopeRank::MinMax => (column[0], column[column.len() - 1]),
            EnvelopeRank::Pointwise { alpha } => (
                quantile_sorted(&column, alpha / 2.0),
                quantile_sorted(&column, 1.0 - alpha / 2.0),
            ),
        };
        lower.push(lo);
        upper.push(hi);
    }
    Ok((lower, upper))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    r: &[f64],
    t: &[f64],
    observed: Vec<f64>,
    replicates: &[Vec<f64>],
    rank: EnvelopeRank,
    seed: u64,
    replicate_seeds: Vec<u64>,
    generator: String,
) -> Result<EnvelopeSet> {
    if observed.len() != r.len() * t.len() {
        return input("observed statistic does not match the lag grid");
    }
    let (lower, upper) = envelope_bounds(replicates, rank)?;
    if lower.len() != observed.len() {
        return input("replicates do not match the lag grid");
    }
    let exceeds = observed
        .iter()
        .zip(lower.iter().zip(&upper))
        .map(|(o, (l, u))| o < l || o > u)
        .collect();
    Ok(EnvelopeSet {
        r: r.to_vec(),
        t: t.to_vec(),
        observed,
        lower,
        upper,
        exceeds,
        rank,
        n_sim: replicates.len(),
        seed,
        replicate_seeds,
        generator,
        disclaimer: DISCLAIMER,
        warnings: Vec::new(),
    })
}

/// Runs `f(k, derive_seed(seed, k))` for every replicate, tagging failures with the index.
fn replicate<T: Send>(
    n: usize,
    seed: u64,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<(Vec<T>, Vec<u64>)> {
    let seeds: Vec<u64> = (0..n as u64).map(|k| derive_seed(seed, k)).collect();
    let out = par_map(n, |k| f(seeds[k]));
    let mut values = Vec::with_capacity(n);
    for (index, v) in out.into_iter().enumerate() {
        values.push(v.map_err(|e| Error::Replicate {
            index,
            source: Box::new(e),
        })?);
    }
    Ok((values, seeds))
}

/// Envelopes of `simulator(seed_k)` over `n_sim` replicates around `observed`.
pub fn envelopes(
    observed: &KSurface,
    simulator: &(dyn Fn(u64) -> Result<KSurface> + Sync),
    n_sim: usize,
    rank: EnvelopeRank,
    seed: u64,
    generator: &str,
) -> Result<EnvelopeSet> {
    if n_sim == 0 {
        return input("need at least one simulation");
    }
    let (sims, seeds) = replicate(n_sim, seed, simulator)?;
    if sims.iter().any(|s| s.r != observed.r || s.t != observed.t) {
        return input("simulated surfaces live on a different lag grid");
    }
    let values: Vec<Vec<f64>> = sims.into_iter().map(|s| s.values).collect();
    assemble(
        &observed.r,
        &observed.t,
        observed.values.clone(),
        &values,
        rank,
        seed,
        seeds,
        generator.to_string(),
    )
}

/// `K^{CD}(r, t) - K^{DC}(r, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSurface {
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn delta(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<DeltaSurface> {
    let cd = k_inhom(p, c, d, r, t, w, opts)?;
    let dc = k_inhom(p, d, c, r, t, w, opts)?;
    let values: Vec<f64> = cd
        .values
        .iter()
        .zip(&dc.values)
        .map(|(a, b)| a - b)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unsupported("non-finite K difference".into()));
    }
    Ok(DeltaSurface {
        r: r.to_vec(),
        t: t.to_vec(),
        values,
    })
}

/// `K^{CD} - K^{ground}`, which vanishes under independent marks.
///
/// The ground part is weighted by `w.ground`, which must be present.
pub fn diag_independent_marks(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    let Some(ground) = &w.ground else {
        return input("ground intensity weights are required");
    };
    let cd = k_inhom(p, c, d, r, t, w, opts)?;
    let g = k_ground(p, r, t, ground, w.source, opts)?;
    let mut out = cd.minus(&g)?;
    out.report.warnings.extend(g.report.warnings);
    Ok(out)
}

/// `K^{CD} - 2 omega_d r^d t`, which vanishes for independent components.
pub fn diag_independent_components(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    Ok(k_inhom(p, c, d, r, t, w, opts)?.minus_poisson())
}

/// `K^{CM} - nu(M \ C) / nu(M) * 2 omega_d r^d t - nu(C) / nu(M) * K^{CC}`.
pub fn decomposition_residual(
    p: &MarkedPattern,
    c: &MarkSet,
    r: &[f64],
    t: &[f64],
    w: &PointWeights,
    opts: &KOptions,
) -> Result<KSurface> {
    let total = p.nu_total();
    let inside = p.nu(c) / total;
    let cm = k_inhom(p, c, &MarkSet::Full, r, t, w, opts)?;
    let cc = k_inhom(p, c, c, r, t, w, opts)?;
    let mut out = cm.clone();
    for (i, &rv) in r.iter().enumerate() {
        for (j, &tv) in t.iter().enumerate() {
            let k = i * t.len() + j;
            out.values[k] = cm.values[k]
                - (1.0 - inside) * poisson_value(rv, tv, p.dim())
                - inside * cc.values[k];
        }
    }
    out.spread = None;
    Ok(out)
}

/// How intensity weights are obtained for permuted patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PermutationWeights {
    /// Rebuild weights for every permuted pattern.
    #[default]
    Rebuild,
    /// Keep the observed pattern's weights attached to the locations (fast).
    Fixed,
}

/// Random-labelling test with statistic `K^{CD} - K^{DC}` and mark-permutation envelopes.
#[allow(clippy::too_many_arguments)]
pub fn random_labelling_test(
    p: &MarkedPattern,
    c: &MarkSet,
    d: &MarkSet,
    r: &[f64],
    t: &[f64],
    builder: &dyn WeightsBuilder,
    weights: PermutationWeights,
    n_perm: usize,
    rank: EnvelopeRank,
    seed: u64,
    opts: &KOptions,
) -> Result<EnvelopeSet> {
    if p.len() < 2 {
        return input("the test needs at least two points");
    }
    if n_perm == 0 {
        return input("need at least one permutation");
    }
    let w = builder.build(p, 1.0)?;
    let observed = delta(p, c, d, r, t, &w, opts)?;
    let (perms, seeds) = replicate(n_perm, seed, |s| {
        let q = p.permute_marks(s)?;
        let wq = match weights {
            PermutationWeights::Rebuild => builder.build(&q, 1.0)?,
            PermutationWeights::Fixed => w.clone(),
        };
        delta(&q, c, d, r, t, &wq, opts).map(|s| s.values)
    })?;
    let generator = match weights {
        PermutationWeights::Rebuild => "mark permutations, weights rebuilt per permutation",
        PermutationWeights::Fixed => "mark permutations, fixed observed weights (fast mode)",
    };
    let mut set = assemble(
        r,
        t,
        observed.values,
        &perms,
        rank,
        seed,
        seeds,
        generator.to_string(),
    )?;
    if c == d {
        set.warnings.push(
            "C = D: the statistic is identically zero and the test is degenerate".to_string(),
        );
    }
    Ok(set)
}

/// Exceedance indicators of an envelope as 0/1 values, cell by cell.
pub fn exceedance_counts(sets: &[EnvelopeSet]) -> Vec<usize> {
    let cells = sets.first().map_or(0, |s| s.exceeds.len());
    let mut out = vec![0; cells];
    for s in sets {
        for (o, &e) in out.iter_mut().zip(&s.exceeds) {
            *o += e as usize;
        }
    }
    out
}

#[cfg(test)]
mod tests;
