//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line on stderr
//! (outside the test harness capture) and then asserts the same outcome.
//!
//! Run with `cargo test -p stmark --test acceptance`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use stmark_core::geometry::{SpaceTimePoint, Window};
use stmark_core::inference::{
    diag_independent_components, diag_independent_marks, envelopes, random_labelling_test,
    EnvelopeRank, EnvelopeSet, PermutationWeights,
};
use stmark_core::intensity::{
    mass_audit_ground, mass_audit_marked, mass_audit_separable, voronoi_ground, voronoi_marked,
    voronoi_separable, AuditStrata, Quadrature, SeparableOptions, SeparableSetup,
};
use stmark_core::math::derive_seed;
use stmark_core::pattern::{MarkSet, MarkSpace, MarkedPattern, MarkedPoint};
use stmark_core::second_order::{
    default_lags, k_directional, k_inhom, HamiltonScenario, KOptions, KSurface, PairSearch,
    PointWeights, TrueIntensity,
};
use stmark_core::simulate::presets::{Preset, PresetSimulator};

const SE_BAND: f64 = 3.0;
const MASS_TOL: f64 = 0.01;
const HAMILTON_TOL: f64 = 0.01;
const SCALING_TOL: f64 = 1e-9;
const COVERAGE_MIN: f64 = 0.95;
const CALIBRATION_RANGE: (f64, f64) = (0.01, 0.12);
const POWER_MIN: f64 = 0.5;
const POISSON_MEAN_TOL: f64 = 0.02;
const LGCP_MEAN_TOL: f64 = 0.05;

fn report(id: &str, name: &str, pass: bool, start: Instant, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "[{verdict}] criterion {id}: {name}: {detail} ({:.1}s)\n",
        start.elapsed().as_secs_f64()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{line}");
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn known() -> KOptions {
    KOptions {
        scenario: HamiltonScenario::Known,
        ..Default::default()
    }
}

fn homogeneous_uniform_marks(lambda: f64, seed: u64) -> MarkedPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Poisson::new(lambda).unwrap().sample(&mut rng) as usize;
    let points = (0..n)
        .map(|_| MarkedPoint {
            loc: SpaceTimePoint::new(vec![rng.random(), rng.random()], rng.random()).unwrap(),
            mark: rng.random(),
        })
        .collect();
    MarkedPattern::new(
        points,
        Window::unit(2),
        MarkSpace::interval(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn random_pattern(n: usize, d: usize, ms: MarkSpace, seed: u64) -> MarkedPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ms.n_labels();
    let points = (0..n)
        .map(|_| MarkedPoint {
            loc: SpaceTimePoint::new((0..d).map(|_| rng.random()).collect(), rng.random()).unwrap(),
            mark: match labels {
                Some(k) => rng.random_range(1..=k) as f64,
                None => rng.random(),
            },
        })
        .collect();
    MarkedPattern::new(points, Window::unit(d), ms).unwrap()
}

const POISSON_LAGS: [f64; 3] = [0.05, 0.1, 0.15];

/// Checks replicate means cell by cell against `truth(r, t)`.
fn replicate_means(
    reps: u64,
    seed: u64,
    estimate: impl Fn(&MarkedPattern, &PointWeights) -> KSurface,
    truth: impl Fn(f64, f64) -> f64,
) -> (bool, String) {
    let lambda = 200.0;
    let mut cells = vec![Vec::new(); 9];
    for s in 0..reps {
        let p = homogeneous_uniform_marks(lambda, derive_seed(seed, s));
        let k = estimate(&p, &PointWeights::constant(&p, lambda));
        for (c, v) in cells.iter_mut().zip(&k.values) {
            c.push(*v);
        }
    }
    let mut worst: f64 = 0.0;
    for (i, &r) in POISSON_LAGS.iter().enumerate() {
        for (j, &t) in POISSON_LAGS.iter().enumerate() {
            let (m, se) = mean_se(&cells[i * 3 + j]);
            worst = worst.max((m - truth(r, t)).abs() / se);
        }
    }
    (
        worst <= SE_BAND,
        format!("largest |mean - truth| / SE over 9 cells = {worst:.2} (limit {SE_BAND})"),
    )
}

#[test]
fn criterion_01_poisson_reference() {
    let start = Instant::now();
    let (c, d) = (MarkSet::closed(0.0, 0.5), MarkSet::left_open(0.5, 1.0));
    let (pass, detail) = replicate_means(
        100,
        1,
        |p, w| k_inhom(p, &c, &d, &POISSON_LAGS, &POISSON_LAGS, w, &known()).unwrap(),
        |r, t| 2.0 * PI * r * r * t,
    );
    report("1", "Poisson reference 2 pi r^2 t", pass, start, detail);
}

#[test]
fn criterion_02_quarter_cone_unbiased() {
    let start = Instant::now();
    let (c, d) = (MarkSet::closed(0.0, 0.5), MarkSet::left_open(0.5, 1.0));
    let phi = 0.3;
    let psi = phi + PI / 4.0;
    let (pass, detail) = replicate_means(
        100,
        2,
        |p, w| {
            k_directional(
                p,
                &c,
                &d,
                phi,
                psi,
                &POISSON_LAGS,
                &POISSON_LAGS,
                w,
                &known(),
            )
            .unwrap()
        },
        // a double cone of opening pi/4 covers a quarter of the disc
        |r, t| 2.0 * PI * r * r * t / 4.0,
    );
    report("2", "quarter-cone estimate unbiased", pass, start, detail);
}

#[test]
fn criterion_03_voronoi_mass_preservation() {
    let start = Instant::now();
    let q = Quadrature::default();
    let strata = AuditStrata::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_mass: f64 = 0.0;
    let mut worst_hamilton: f64 = 0.0;
    let mut worst_product_hamilton: f64 = 0.0;
    let mut worst_name = String::new();
    for k in 0..20u64 {
        let n = rng.random_range(10..=500);
        let ms = if k % 2 == 0 {
            MarkSpace::counting(2).unwrap()
        } else {
            MarkSpace::interval(0.0, 1.0).unwrap()
        };
        let p = random_pattern(n, 2, ms, 300 + k);
        let mut audits = Vec::new();
        let g = voronoi_ground(&p, &q).unwrap();
        audits.push(("voronoi_ground", mass_audit_ground(&p, &g, strata, k)));
        let m = voronoi_marked(&p, &q).unwrap();
        audits.push(("voronoi_marked", mass_audit_marked(&p, &m, strata, k)));
        for (name, setup) in [
            ("separable common mark", SeparableSetup::CommonMark),
            (
                "separable non-separable ground",
                SeparableSetup::NonSeparableCommonMark,
            ),
            ("separable time-mark", SeparableSetup::TimeMark),
        ] {
            let s = voronoi_separable(&p, setup, SeparableOptions::default(), &q).unwrap();
            audits.push((name, mass_audit_separable(&p, &s, strata, k)));
        }
        for (name, a) in audits {
            if a.rel_error > worst_mass {
                worst_mass = a.rel_error;
                worst_name = format!("{name}, N = {n}");
            }
            // the identity holds for the Voronoi estimators themselves, not for products of them
            if name.starts_with("voronoi") {
                worst_hamilton = worst_hamilton.max(a.hamilton_rel_error);
            } else {
                worst_product_hamilton = worst_product_hamilton.max(a.hamilton_rel_error);
            }
        }
    }
    let pass = worst_mass <= MASS_TOL && worst_hamilton <= HAMILTON_TOL;
    report(
        "3",
        "Voronoi mass preservation and Hamilton identity",
        pass,
        start,
        format!(
            "largest mass error {worst_mass:.2e} ({worst_name}), largest Hamilton error {worst_hamilton:.2e} (limits {MASS_TOL}, {HAMILTON_TOL}); separable products deviate from the Hamilton sum by up to {worst_product_hamilton:.2e}"
        ),
    );
}

struct Scaled {
    literal: f64,
    corrected: f64,
}

/// Largest relative deviation of the rescaled estimate from the original,
/// both as stated and after dividing by the Jacobian `beta_s^d beta_t`.
fn scaling_deviation() -> Scaled {
    let (c, d) = (MarkSet::closed(0.0, 0.5), MarkSet::left_open(0.5, 1.0));
    let lam = |x: &[f64], t: f64, m: f64| 80.0 + 60.0 * x[0] * t + 20.0 * m;
    let (r, t) = ([0.05, 0.1, 0.2], [0.05, 0.1, 0.2]);
    let mut out = Scaled {
        literal: 0.0,
        corrected: 0.0,
    };
    for k in 0..10u64 {
        let p = random_pattern(
            100 + 20 * k as usize,
            2,
            MarkSpace::interval(0.0, 1.0).unwrap(),
            400 + k,
        );
        let base = k_inhom(
            &p,
            &c,
            &d,
            &r,
            &t,
            &PointWeights::from_fn(&p, lam),
            &known(),
        )
        .unwrap();
        for (bs, bt) in [(2.0, 0.5), (10.0, 3.0)] {
            let jac: f64 = bs * bs * bt;
            let q = p.rescale(bs, bt).unwrap();
            let w =
                PointWeights::from_fn(&q, |x, s, m| lam(&[x[0] / bs, x[1] / bs], s / bt, m) / jac);
            let rs: Vec<f64> = r.iter().map(|v| v * bs).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * bt).collect();
            let scaled = k_inhom(&q, &c, &d, &rs, &ts, &w, &known()).unwrap();
            for (a, b) in scaled.values.iter().zip(&base.values) {
                if *b == 0.0 {
                    continue;
                }
                out.literal = out.literal.max((a - b).abs() / b.abs());
                out.corrected = out.corrected.max((a / jac - b).abs() / b.abs());
            }
        }
    }
    out
}

#[test]
#[ignore = "the literal identity omits the Jacobian factor and cannot hold; see the corrected test below"]
fn criterion_04_scaling_identity_literal() {
    let start = Instant::now();
    let s = scaling_deviation();
    report(
        "4",
        "scaling identity as stated",
        s.literal <= SCALING_TOL,
        start,
        format!(
            "largest relative deviation {:.3e} (limit {SCALING_TOL:e})",
            s.literal
        ),
    );
}

#[test]
fn criterion_04_scaling_identity_with_jacobian() {
    let start = Instant::now();
    let s = scaling_deviation();
    report(
        "4",
        "scaling identity up to beta_s^d beta_t",
        s.corrected <= SCALING_TOL,
        start,
        format!(
            "largest relative deviation {:.3e} (limit {SCALING_TOL:e}); without the factor it is {:.3e}",
            s.corrected, s.literal
        ),
    );
}

#[test]
fn criterion_05_indexed_equals_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenarios = [
        HamiltonScenario::Known,
        HamiltonScenario::EstimatedMarks,
        HamiltonScenario::EstimatedWindow,
        HamiltonScenario::Ratio,
    ];
    let mut mismatches = 0;
    let mut cells = 0;
    for k in 0..50u64 {
        let n = rng.random_range(2..=200);
        let labels = k % 2 == 0;
        let ms = if labels {
            MarkSpace::counting(3).unwrap()
        } else {
            MarkSpace::interval(0.0, 1.0).unwrap()
        };
        let p = random_pattern(n, 2, ms, 500 + k);
        let (c, d) = if labels {
            (MarkSet::labels(&[1]), MarkSet::labels(&[2, 3]))
        } else {
            (MarkSet::closed(0.0, 0.4), MarkSet::left_open(0.4, 1.0))
        };
        let w = PointWeights::from_fn(&p, |x, t, _| 50.0 + 100.0 * x[0] + 30.0 * t)
            .with_ground(vec![n as f64; n]);
        let (r, t) = default_lags(p.window());
        assert_eq!((r.len(), t.len()), (20, 20));
        let scenario = scenarios[k as usize % 4];
        let fast = KOptions {
            scenario,
            search: PairSearch::Indexed,
            ..Default::default()
        };
        let slow = KOptions {
            scenario,
            search: PairSearch::BruteForce,
            ..Default::default()
        };
        let a = k_inhom(&p, &c, &d, &r, &t, &w, &fast).unwrap();
        let b = k_inhom(&p, &c, &d, &r, &t, &w, &slow).unwrap();
        cells += a.values.len();
        mismatches += a
            .values
            .iter()
            .zip(&b.values)
            .filter(|(x, y)| x.to_bits() != y.to_bits())
            .count();
    }
    report(
        "5",
        "indexed pair search equals brute force",
        mismatches == 0,
        start,
        format!("{mismatches} of {cells} cells differ bitwise over 50 patterns"),
    );
}

fn preset_weights(preset: Preset, p: &MarkedPattern) -> PointWeights {
    PointWeights::from_fn(p, |x, t, m| preset.marked_intensity(x, t, m))
        .with_ground_fn(p, |x, t| preset.ground_intensity(x, t))
}

#[test]
fn criterion_06_independent_marks_envelopes() {
    let start = Instant::now();
    let preset = Preset::LgcpBernoulli;
    let sim = PresetSimulator::new(preset).unwrap();
    let (c, d) = (MarkSet::labels(&[1]), MarkSet::labels(&[2]));
    let (r, t) = default_lags(&preset.window());
    let opts = KOptions::default();
    let diag = |seed: u64| {
        let p = sim.simulate(seed)?;
        diag_independent_marks(&p, &c, &d, &r, &t, &preset_weights(preset, &p), &opts)
    };
    let observed = diag(6).unwrap();
    let e = envelopes(
        &observed,
        &diag,
        99,
        EnvelopeRank::MinMax,
        60,
        "lgcp-bernoulli",
    )
    .unwrap();
    let cov = e.zero_coverage();
    report(
        "6",
        "K^CD - K^ground envelopes cover 0 under random labelling",
        cov >= COVERAGE_MIN,
        start,
        format!(
            "0 inside the min/max band at {:.1}% of {} cells (need {:.0}%)",
            100.0 * cov,
            e.lower.len(),
            100.0 * COVERAGE_MIN
        ),
    );
}

#[test]
fn criterion_07_independent_components_envelopes() {
    let start = Instant::now();
    let preset = Preset::Bivariate;
    let sim = PresetSimulator::new(preset).unwrap();
    let (c, d) = (MarkSet::labels(&[1]), MarkSet::labels(&[2]));
    let (r, t) = default_lags(&preset.window());
    let opts = KOptions::default();
    let diag = |seed: u64| {
        let p = sim.simulate(seed)?;
        diag_independent_components(&p, &c, &d, &r, &t, &preset_weights(preset, &p), &opts)
    };
    let observed = diag(7).unwrap();
    let e = envelopes(&observed, &diag, 99, EnvelopeRank::MinMax, 70, "bivariate").unwrap();
    let cov = e.zero_coverage();
    report(
        "7",
        "K^12 - 2 pi r^2 t envelopes cover 0 for independent components",
        cov >= COVERAGE_MIN,
        start,
        format!(
            "0 inside the min/max band at {:.1}% of {} cells (need {:.0}%)",
            100.0 * cov,
            e.lower.len(),
            100.0 * COVERAGE_MIN
        ),
    );
}

fn labelling_test(preset: Preset, seed: u64, c: &MarkSet, d: &MarkSet) -> EnvelopeSet {
    let sim = PresetSimulator::new(preset).unwrap();
    let p = sim.simulate(seed).unwrap();
    let (r, t) = default_lags(&preset.window());
    let builder = TrueIntensity(move |x: &[f64], t: f64, m: f64| preset.marked_intensity(x, t, m));
    random_labelling_test(
        &p,
        c,
        d,
        &r,
        &t,
        &builder,
        PermutationWeights::Rebuild,
        99,
        EnvelopeRank::Pointwise { alpha: 0.05 },
        derive_seed(seed, 1),
        &KOptions::default(),
    )
    .unwrap()
}

#[test]
fn criterion_08_random_labelling_calibration_and_power() {
    let start = Instant::now();
    let (c, d) = (MarkSet::labels(&[1]), MarkSet::labels(&[2]));
    let mut hits = 0usize;
    let mut cells = 0usize;
    let mut null_flagged = 0usize;
    for s in 0..100u64 {
        let e = labelling_test(Preset::PoissonBernoulli, derive_seed(8, s), &c, &d);
        hits += e.exceeds.iter().filter(|&&x| x).count();
        cells += e.exceeds.len();
        null_flagged += e.any_exceedance() as usize;
    }
    let freq = hits as f64 / cells as f64;
    let calibrated = (CALIBRATION_RANGE.0..=CALIBRATION_RANGE.1).contains(&freq);

    let (c, d) = (MarkSet::closed(0.0, 0.5), MarkSet::left_open(0.5, 1.0));
    let detected = (0..50u64)
        .filter(|&s| {
            labelling_test(Preset::LgcpGeostat, derive_seed(80, s), &c, &d).any_exceedance()
        })
        .count();
    let power = detected as f64 / 50.0;
    report(
        "8",
        "random-labelling test calibration and power",
        calibrated && power >= POWER_MIN,
        start,
        format!(
            "null exceedance frequency {freq:.4} over {cells} cells (range {:?}); geostatistical marks flagged in {detected} of 50 datasets (need {:.0}%; null datasets flagged: {null_flagged} of 100)",
            CALIBRATION_RANGE,
            100.0 * POWER_MIN
        ),
    );
}

/// Midpoint rule on an `n^3` grid over the unit cube.
fn cube_integral(f: impl Fn(f64, f64, f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                acc += f(
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                );
            }
        }
    }
    acc * h * h * h
}

#[test]
fn criterion_09_simulation_means() {
    let start = Instant::now();
    let poisson_oracle = cube_integral(|x, _y, t| 5.0 * t * (5.0 + 0.5 * x).exp(), 200);
    let sim = PresetSimulator::new(Preset::PoissonBernoulli).unwrap();
    let n: Vec<f64> = (0..500u64)
        .map(|s| sim.simulate(derive_seed(9, s)).unwrap().len() as f64)
        .collect();
    let (poisson_mean, _) = mean_se(&n);
    let poisson_err = (poisson_mean - poisson_oracle).abs() / poisson_oracle;

    // E exp(Z) = exp(mu + sigma^2 / 2) with mu = log 750 - 0.5 (y + t) - sigma^2 / 2
    let sigma2: f64 = 1.0 / 16.0;
    let lgcp_oracle = cube_integral(
        |_x, y, t| (750f64.ln() - 0.5 * (y + t) - sigma2 / 2.0 + sigma2 / 2.0).exp(),
        200,
    );
    let sim = PresetSimulator::new(Preset::LgcpBernoulli).unwrap();
    let n: Vec<f64> = (0..200u64)
        .map(|s| sim.simulate(derive_seed(90, s)).unwrap().len() as f64)
        .collect();
    let (lgcp_mean, _) = mean_se(&n);
    let lgcp_err = (lgcp_mean - lgcp_oracle).abs() / lgcp_oracle;
    report(
        "9",
        "simulation means",
        poisson_err <= POISSON_MEAN_TOL && lgcp_err <= LGCP_MEAN_TOL,
        start,
        format!(
            "Poisson {poisson_mean:.1} vs {poisson_oracle:.1} (rel {poisson_err:.4}, limit {POISSON_MEAN_TOL}); LGCP {lgcp_mean:.1} vs {lgcp_oracle:.1} (rel {lgcp_err:.4}, limit {LGCP_MEAN_TOL})"
        ),
    );
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn run_cli(cmd: &str, config: &str, out: &Path, threads: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_stmark"))
        .arg(cmd)
        .arg("--config")
        .arg(fixtures().join("fixtures").join(config))
        .arg("--out")
        .arg(out)
        .args(["--threads", threads])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let cases: &[(&str, &str, &str, &[&str])] = &[
        ("simulate", "simulate.toml", "simulate", &["catalog.csv"]),
        (
            "intensity",
            "intensity.toml",
            "intensity",
            &["intensity.csv", "cells.csv", "audit.txt"],
        ),
        (
            "intensity",
            "intensity_separable.toml",
            "intensity_separable",
            &["intensity.csv", "audit.txt"],
        ),
        ("k", "k.toml", "k", &["k.csv", "k_smoothed.csv"]),
        ("k", "k_plugin.toml", "k_plugin", &["k.csv"]),
        (
            "test",
            "test.toml",
            "test",
            &["envelope.csv", "summary.txt"],
        ),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (cmd, config, golden, files) in cases {
        let serial = tempfile::tempdir().unwrap();
        let parallel = tempfile::tempdir().unwrap();
        if !run_cli(cmd, config, serial.path(), "1") || !run_cli(cmd, config, parallel.path(), "4")
        {
            failures.push(format!("{config}: run failed"));
            continue;
        }
        for f in *files {
            let want = std::fs::read(fixtures().join("golden").join(golden).join(f)).ok();
            for dir in [serial.path(), parallel.path()] {
                compared += 1;
                if std::fs::read(dir.join(f)).ok() != want || want.is_none() {
                    failures.push(format!("{golden}/{f}"));
                }
            }
        }
    }
    report(
        "10",
        "golden outputs, serial and parallel",
        failures.is_empty(),
        start,
        format!(
            "{} of {compared} outputs differ {failures:?}",
            failures.len()
        ),
    );
}
