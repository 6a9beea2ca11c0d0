use super::*;
use crate::geometry::{SpaceTimePoint, Window};
use crate::math::mean_se;
use crate::pattern::{MarkReference, MarkSpace, MarkedPoint};
use crate::second_order::{HamiltonScenario, TrueIntensity, WeightsSource};
use crate::simulate::presets::{Preset, PresetSimulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn known() -> KOptions {
    KOptions {
        scenario: HamiltonScenario::Known,
        ..Default::default()
    }
}

fn surface(values: Vec<f64>) -> KSurface {
    let mut s = crate::second_order::poisson_reference(&[0.1, 0.2], &[0.1], 2).unwrap();
    s.values = values;
    s
}

/// Homogeneous Poisson on the unit cube with marks from `mark`.
fn poisson(
    lam: f64,
    ms: MarkSpace,
    seed: u64,
    mark: impl Fn(&mut ChaCha8Rng) -> f64,
) -> MarkedPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Poisson::new(lam).unwrap().sample(&mut rng) as usize;
    let points = (0..n)
        .map(|_| {
            let loc = SpaceTimePoint::new(vec![rng.random(), rng.random()], rng.random()).unwrap();
            MarkedPoint {
                loc,
                mark: mark(&mut rng),
            }
        })
        .collect();
    MarkedPattern::new(points, Window::unit(2), ms).unwrap()
}

fn lower() -> MarkSet {
    MarkSet::closed(0.0, 0.5)
}

fn upper() -> MarkSet {
    MarkSet::left_open(0.5, 1.0)
}

#[test]
fn single_replicate_is_its_own_band() {
    let obs = surface(vec![0.0, 1.0]);
    let e = envelopes(
        &obs,
        &|s| Ok(surface(vec![s as f64 * 1e-20, 2.0])),
        1,
        EnvelopeRank::MinMax,
        9,
        "fixed",
    )
    .unwrap();
    assert_eq!(e.lower, e.upper);
    assert_eq!(e.n_sim, 1);
    assert_eq!(e.replicate_seeds, vec![derive_seed(9, 0)]);
    assert_eq!(e.exceeds, vec![true, true]);
}

#[test]
fn observed_among_replicates_never_exits_minmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reps: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..6).map(|_| rng.random()).collect())
        .collect();
    let (lo, hi) = envelope_bounds(&reps, EnvelopeRank::MinMax).unwrap();
    for rep in &reps {
        for c in 0..6 {
            assert!(lo[c] <= rep[c] && rep[c] <= hi[c]);
        }
    }
}

#[test]
fn pointwise_bounds_are_type7_quantiles() {
    let reps: Vec<Vec<f64>> = (1..=99).rev().map(|k| vec![k as f64]).collect();
    let (lo, hi) = envelope_bounds(&reps, EnvelopeRank::Pointwise { alpha: 0.05 }).unwrap();
    // h = 98 * 0.025 = 2.45 and 98 * 0.975 = 95.55 on the sorted values 1..=99.
    assert!((lo[0] - 3.45).abs() < 1e-12);
    assert!((hi[0] - 96.55).abs() < 1e-12);
    assert!(envelope_bounds(&reps, EnvelopeRank::Pointwise { alpha: 1.0 }).is_err());
    assert!(envelope_bounds(&[], EnvelopeRank::MinMax).is_err());
}

#[test]
fn exceedance_is_strict() {
    let obs = surface(vec![1.0, 3.0]);
    let e = envelopes(
        &obs,
        &|_| Ok(surface(vec![1.0, 3.0])),
        3,
        EnvelopeRank::MinMax,
        1,
        "flat",
    )
    .unwrap();
    assert!(!e.any_exceedance());
    assert_eq!(e.exceedance_fraction(), 0.0);
    assert_eq!(e.zero_coverage(), 0.0);
}

#[test]
fn simulator_failures_carry_the_replicate_index() {
    let obs = surface(vec![0.0, 0.0]);
    let bad = derive_seed(5, 3);
    let sim = |s: u64| {
        if s == bad {
            Err(Error::EmptyPattern)
        } else {
            Ok(surface(vec![0.0, 0.0]))
        }
    };
    match envelopes(&obs, &sim, 10, EnvelopeRank::MinMax, 5, "x") {
        Err(Error::Replicate { index, source }) => {
            assert_eq!(index, 3);
            assert_eq!(*source, Error::EmptyPattern);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn delta_is_antisymmetric() {
    let p = poisson(200.0, MarkSpace::interval(0.0, 1.0).unwrap(), 1, |r| {
        r.random()
    });
    let w = PointWeights::from_fn(&p, |x, t, m| 150.0 + 100.0 * x[0] * m + 10.0 * t);
    let (r, t) = ([0.05, 0.1, 0.2], [0.05, 0.2]);
    let a = delta(&p, &lower(), &upper(), &r, &t, &w, &KOptions::default()).unwrap();
    let b = delta(&p, &upper(), &lower(), &r, &t, &w, &KOptions::default()).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert_eq!(*x, -*y);
    }
}

#[test]
fn permutation_keeps_marks_and_ground_statistics() {
    let p = poisson(150.0, MarkSpace::interval(0.0, 1.0).unwrap(), 2, |r| {
        r.random()
    });
    let g: Vec<f64> = p
        .points()
        .iter()
        .map(|q| 100.0 + 80.0 * q.loc.x[1])
        .collect();
    let (r, t) = ([0.05, 0.1], [0.1, 0.2]);
    let base = k_ground(
        &p,
        &r,
        &t,
        &g,
        WeightsSource::TrueIntensity,
        &KOptions::default(),
    )
    .unwrap();
    for s in 0..5 {
        let q = p.permute_marks(s).unwrap();
        let mut a = p.marks();
        let mut b = q.marks();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        let k = k_ground(
            &q,
            &r,
            &t,
            &g,
            WeightsSource::TrueIntensity,
            &KOptions::default(),
        )
        .unwrap();
        assert_eq!(k.values, base.values);
    }
}

#[test]
fn identical_mark_sets_give_a_degenerate_test() {
    let p = poisson(100.0, MarkSpace::interval(0.0, 1.0).unwrap(), 3, |r| {
        r.random()
    });
    let b = TrueIntensity(|_: &[f64], _: f64, _: f64| 100.0);
    let e = random_labelling_test(
        &p,
        &lower(),
        &lower(),
        &[0.1],
        &[0.1],
        &b,
        PermutationWeights::Rebuild,
        19,
        EnvelopeRank::MinMax,
        4,
        &KOptions::default(),
    )
    .unwrap();
    assert!(e.observed.iter().all(|&v| v == 0.0));
    assert!(e.lower.iter().chain(&e.upper).all(|&v| v == 0.0));
    assert!(e.warnings.iter().any(|w| w.contains("degenerate")));
}

#[test]
fn labelling_test_is_deterministic_and_labels_its_weights() {
    let p = poisson(150.0, MarkSpace::interval(0.0, 1.0).unwrap(), 4, |r| {
        r.random()
    });
    let b = TrueIntensity(|x: &[f64], _: f64, m: f64| 100.0 + 100.0 * x[0] * m);
    let run = |mode| {
        random_labelling_test(
            &p,
            &lower(),
            &upper(),
            &[0.05, 0.1],
            &[0.1, 0.2],
            &b,
            mode,
            DEFAULT_PERMUTATIONS,
            EnvelopeRank::Pointwise {
                alpha: DEFAULT_ALPHA,
            },
            11,
            &KOptions::default(),
        )
        .unwrap()
    };
    let a = run(PermutationWeights::Rebuild);
    assert_eq!(a, run(PermutationWeights::Rebuild));
    assert_eq!(a.n_sim, 99);
    let f = run(PermutationWeights::Fixed);
    assert!(f.generator.contains("fixed"));
    assert_eq!(f.observed, a.observed);
    assert_ne!(f.lower, a.lower);
    assert!(a.lower.iter().zip(&a.upper).all(|(l, u)| l <= u));
    let tiny = MarkedPattern::new(
        p.points()[..1].to_vec(),
        Window::unit(2),
        p.mark_space().clone(),
    )
    .unwrap();
    let err = random_labelling_test(
        &tiny,
        &lower(),
        &upper(),
        &[0.1],
        &[0.1],
        &b,
        PermutationWeights::Rebuild,
        9,
        EnvelopeRank::MinMax,
        1,
        &KOptions::default(),
    );
    assert!(err.is_err());
}

#[test]
fn full_mark_sets_with_empirical_reference_reduce_to_ground() {
    let ms = MarkSpace::interval_with(0.0, 1.0, MarkReference::Empirical).unwrap();
    let p = poisson(150.0, ms, 5, |r| r.random());
    let g: Vec<f64> = p.points().iter().map(|q| 120.0 + 60.0 * q.loc.t).collect();
    let w = PointWeights::new(g.clone(), WeightsSource::TrueIntensity).with_ground(g);
    for opts in [known(), KOptions::default()] {
        let d = diag_independent_marks(
            &p,
            &MarkSet::Full,
            &MarkSet::Full,
            &[0.1, 0.2],
            &[0.1],
            &w,
            &opts,
        )
        .unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0), "{:?}", d.values);
    }
    let no_ground = PointWeights::new(vec![1.0; p.len()], WeightsSource::TrueIntensity);
    assert!(diag_independent_marks(
        &p,
        &MarkSet::Full,
        &MarkSet::Full,
        &[0.1],
        &[0.1],
        &no_ground,
        &known()
    )
    .is_err());
}

#[test]
fn random_labelling_centres_both_diagnostics() {
    let lam = 200.0;
    let (r, t) = ([0.05, 0.1], [0.05, 0.15]);
    let reps = 100;
    let mut marks_diag = vec![Vec::new(); 4];
    let mut deltas = vec![Vec::new(); 4];
    for s in 0..reps {
        let p = poisson(lam, MarkSpace::interval(0.0, 1.0).unwrap(), 100 + s, |r| {
            r.random()
        });
        let w = PointWeights::constant(&p, lam).with_ground(vec![lam; p.len()]);
        let d = diag_independent_marks(&p, &lower(), &upper(), &r, &t, &w, &known()).unwrap();
        let e = delta(&p, &lower(), &upper(), &r, &t, &w, &known()).unwrap();
        for k in 0..4 {
            marks_diag[k].push(d.values[k]);
            deltas[k].push(e.values[k]);
        }
    }
    for k in 0..4 {
        for xs in [&marks_diag[k], &deltas[k]] {
            let (m, se) = mean_se(xs);
            assert!(m.abs() < 3.0 * se, "cell {k}: {m} +- {se}");
        }
    }
}

#[test]
fn geostatistical_marks_pull_the_cross_function_below_ground() {
    let sim = PresetSimulator::with_grid(Preset::LgcpGeostat, 10).unwrap();
    let c = MarkSet::closed(-8.0, 0.0);
    let d = MarkSet::left_open(0.0, 8.0);
    let mut negative = 0;
    let reps = 30;
    for s in 0..reps {
        let p = sim.simulate(s).unwrap();
        let pre = Preset::LgcpGeostat;
        let w = PointWeights::from_fn(&p, |x, t, m| pre.marked_intensity(x, t, m))
            .with_ground_fn(&p, |x, t| pre.ground_intensity(x, t));
        let diag =
            diag_independent_marks(&p, &c, &d, &[0.05], &[0.1], &w, &KOptions::default()).unwrap();
        negative += (diag.values[0] < 0.0) as usize;
    }
    assert!(negative >= 24, "{negative} of {reps}");
}

#[test]
fn independent_components_centre_and_coupled_copies_do_not() {
    let lam = 150.0;
    let (r, t) = ([0.05, 0.1], [0.1]);
    let mut diag = vec![Vec::new(); 2];
    let mut resid = vec![Vec::new(); 2];
    for s in 0..100 {
        let p = poisson(2.0 * lam, MarkSpace::counting(2).unwrap(), 300 + s, |r| {
            r.random_range(1..=2) as f64
        });
        let w = PointWeights::constant(&p, lam);
        let a = diag_independent_components(
            &p,
            &MarkSet::labels(&[1]),
            &MarkSet::labels(&[2]),
            &r,
            &t,
            &w,
            &known(),
        )
        .unwrap();
        let b = decomposition_residual(&p, &MarkSet::labels(&[1]), &r, &t, &w, &known()).unwrap();
        for k in 0..2 {
            diag[k].push(a.values[k]);
            resid[k].push(b.values[k]);
        }
    }
    for k in 0..2 {
        for xs in [&diag[k], &resid[k]] {
            let (m, se) = mean_se(xs);
            assert!(m.abs() < 3.0 * se, "cell {k}: {m} +- {se}");
        }
    }
    let base = poisson(lam, MarkSpace::counting(2).unwrap(), 7, |_| 1.0);
    let copies: Vec<MarkedPoint> = base
        .points()
        .iter()
        .flat_map(|q| {
            [
                q.clone(),
                MarkedPoint {
                    loc: q.loc.clone(),
                    mark: 2.0,
                },
            ]
        })
        .collect();
    let coupled =
        MarkedPattern::new(copies, Window::unit(2), MarkSpace::counting(2).unwrap()).unwrap();
    let w = PointWeights::constant(&coupled, lam);
    let a = diag_independent_components(
        &coupled,
        &MarkSet::labels(&[1]),
        &MarkSet::labels(&[2]),
        &r,
        &t,
        &w,
        &known(),
    )
    .unwrap();
    // Every point has its twin at lag zero, adding about 1 / lambda.
    assert!(a.values[0] > 0.5 / lam, "{}", a.values[0]);
}
