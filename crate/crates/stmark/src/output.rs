//! Long-format CSV surfaces and JSON sidecars.

use std::fmt::Write as _;

use serde_json::{json, Value};
use stmark_core::inference::EnvelopeSet;
use stmark_core::pattern::{IngestReport, MarkReference, MarkSpace};
use stmark_core::second_order::{
    poisson_value, HamiltonScenario, KSurface, QualityReport, WeightsSource,
};

/// `r,t,k_hat,k_poisson,diff`, plus `sd` for averaged surfaces.
pub fn k_csv(s: &KSurface) -> String {
    let mut out = String::from("r,t,k_hat,k_poisson,diff");
    if s.spread.is_some() {
        out.push_str(",sd");
    }
    out.push('\n');
    for (i, &r) in s.r.iter().enumerate() {
        for (j, &t) in s.t.iter().enumerate() {
            let k = s.at(i, j);
            let p = poisson_value(r, t, s.dim);
            write!(out, "{r},{t},{k},{p},{}", k - p).unwrap();
            if let Some(sd) = &s.spread {
                write!(out, ",{}", sd[i * s.t.len() + j]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn scenario_name(s: Option<HamiltonScenario>) -> &'static str {
    match s {
        None => "stationary",
        Some(HamiltonScenario::Known) => "known",
        Some(HamiltonScenario::EstimatedMarks) => "estimated-marks",
        Some(HamiltonScenario::EstimatedWindow) => "estimated-window",
        Some(HamiltonScenario::Ratio) => "ratio",
    }
}

pub fn weights_json(w: Option<WeightsSource>) -> Value {
    match w {
        None => Value::Null,
        Some(WeightsSource::TrueIntensity) => json!("true-intensity"),
        Some(WeightsSource::PluggedEstimate) => json!("plugged-estimate"),
        Some(WeightsSource::Smoothed { n, retention }) => {
            json!({"smoothed": {"n": n, "retention": retention}})
        }
    }
}

pub fn report_json(r: &QualityReport) -> Value {
    json!({
        "floor_hits": r.floored_weights,
        "floored_pairs": r.floored_pairs,
        "cells_without_first_points": r.cells_without_first_points,
        "undefined_cells": r.undefined_cells,
        "degenerate_thinnings": r.degenerate_thinnings,
        "warnings": r.warnings,
    })
}

pub fn ingest_json(r: &IngestReport) -> Value {
    json!({
        "dropped_outside": r.dropped_outside,
        "dropped_invalid_mark": r.dropped_invalid_mark,
        "duplicates_removed": r.duplicates_removed,
        "warnings": r.warnings,
    })
}

pub fn mark_space_json(m: &MarkSpace) -> Value {
    match m {
        MarkSpace::Interval { lo, hi, reference } => json!({
            "kind": "interval",
            "lo": lo,
            "hi": hi,
            "reference": match reference {
                MarkReference::Lebesgue => "lebesgue",
                MarkReference::NormalizedLebesgue => "normalized",
                MarkReference::Empirical => "empirical",
            },
        }),
        MarkSpace::Labels { weights } => json!({"kind": "labels", "weights": weights}),
    }
}

pub fn k_json(s: &KSurface, seed: u64, n_points: usize) -> Value {
    json!({
        "c": s.c.to_string(),
        "d": s.d.to_string(),
        "scenario": scenario_name(s.scenario),
        "weights_source": weights_json(s.weights_source),
        "seed": seed,
        "n_points": n_points,
        "dim": s.dim,
        "n_r": s.r.len(),
        "n_t": s.t.len(),
        "quality": report_json(&s.report),
    })
}

/// `r,t,observed,lower,upper,exceeds`.
pub fn envelope_csv(e: &EnvelopeSet) -> String {
    let mut out = String::from("r,t,observed,lower,upper,exceeds\n");
    for (i, &r) in e.r.iter().enumerate() {
        for (j, &t) in e.t.iter().enumerate() {
            let k = e.at(i, j);
            writeln!(
                out,
                "{r},{t},{},{},{},{}",
                e.observed[k], e.lower[k], e.upper[k], e.exceeds[k] as u8
            )
            .unwrap();
        }
    }
    out
}

pub fn envelope_json(e: &EnvelopeSet) -> Value {
    json!({
        "n_perm": e.n_sim,
        "rank": e.rank.describe(),
        "seed": e.seed,
        "replicate_seeds": e.replicate_seeds,
        "generator": e.generator,
        "exceeded_cells": e.exceeds.iter().filter(|&&x| x).count(),
        "n_cells": e.exceeds.len(),
        "exceedance_fraction": e.exceedance_fraction(),
        "disclaimer": e.disclaimer,
        "warnings": e.warnings,
    })
}

pub fn test_summary(e: &EnvelopeSet, c: &str, d: &str) -> String {
    let hit = e.exceeds.iter().filter(|&&x| x).count();
    let mut s = String::new();
    writeln!(s, "random-labelling test").unwrap();
    writeln!(s, "statistic: K^CD - K^DC with C = {c}, D = {d}").unwrap();
    writeln!(s, "replicates: {} ({})", e.n_sim, e.generator).unwrap();
    writeln!(s, "envelope: {}", e.rank.describe()).unwrap();
    writeln!(
        s,
        "cells outside the envelope: {hit} of {} ({})",
        e.exceeds.len(),
        e.exceedance_fraction()
    )
    .unwrap();
    for w in &e.warnings {
        writeln!(s, "warning: {w}").unwrap();
    }
    writeln!(s, "caveat: {}", e.disclaimer).unwrap();
    writeln!(
        s,
        "decision: not made here; how many lags and mark sets enter a rejection is left to the analyst"
    )
    .unwrap();
    s
}

pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}
