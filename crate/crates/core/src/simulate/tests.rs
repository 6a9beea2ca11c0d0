use super::*;
use crate::math::mean_se;
use crate::pattern::MarkSet;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson as PoissonDist};

fn constant_field(lam: f64) -> IntensityField {
    IntensityField::new(move |_, _| lam, Window::unit(2), None).unwrap()
}

#[test]
fn whittle_matern_closed_forms_match_bessel() {
    for &nu in &[0.5, 1.5, 2.5] {
        let closed = CovKind::WhittleMatern {
            sigma2: 2.0,
            nu,
            c: 1.3,
        };
        let shifted = CovKind::WhittleMatern {
            sigma2: 2.0,
            nu: nu + 1e-13,
            c: 1.3,
        };
        for &h in &[0.01, 0.4, 1.0, 3.0] {
            let a = closed.eval(h);
            let b = shifted.eval(h);
            assert!(
                (a - b).abs() < 1e-9 * a.abs().max(1e-300),
                "nu={nu} h={h}: {a} vs {b}"
            );
        }
        assert_eq!(closed.eval(0.0), 2.0);
    }
    let wm = CovKind::WhittleMatern {
        sigma2: 1.0,
        nu: 0.8,
        c: 2.0,
    };
    assert!((wm.eval(1e-9) - 1.0).abs() < 1e-6);
    assert!(wm.eval(0.5) > wm.eval(1.0));
}

#[test]
fn poisson_constant_mean_and_chi_square() {
    let field = constant_field(100.0);
    let counts: Vec<usize> = (0..500)
        .map(|s| sim_poisson(&field, s).unwrap().len())
        .collect();
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mean, _) = mean_se(&xs);
    let half = 3.0 * (100.0f64 / 500.0).sqrt();
    assert!((mean - 100.0).abs() < half, "mean {mean}");

    // Bins with expected frequency >= 5.
    let oracle = PoissonDist::new(100.0).unwrap();
    let edges: Vec<u64> = (80..=120).step_by(4).collect();
    let mut observed = vec![0usize; edges.len() + 1];
    let mut probs = vec![0.0; edges.len() + 1];
    for &c in &counts {
        let b = edges
            .iter()
            .position(|&e| (c as u64) < e)
            .unwrap_or(edges.len());
        observed[b] += 1;
    }
    for k in 0..400u64 {
        let b = edges.iter().position(|&e| k < e).unwrap_or(edges.len());
        probs[b] += oracle.pmf(k);
    }
    let chi2: f64 = observed
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * 500.0;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let crit = ChiSquared::new((observed.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn zero_intensity_gives_empty_pattern() {
    assert!(sim_poisson(&constant_field(0.0), 1).unwrap().is_empty());
}

#[test]
fn bound_violation_detected() {
    let f = IntensityField::new(|x: &[f64], _| 10.0 * x[0], Window::unit(2), Some(20.0)).unwrap();
    assert!(sim_poisson(&f, 0).is_ok());
    assert!(IntensityField::new(|x: &[f64], _| 10.0 * x[0], Window::unit(2), Some(5.0)).is_err());
}

#[test]
fn poisson_deterministic_under_seed() {
    let f = constant_field(50.0);
    assert_eq!(sim_poisson(&f, 9).unwrap(), sim_poisson(&f, 9).unwrap());
    assert_ne!(sim_poisson(&f, 9).unwrap(), sim_poisson(&f, 10).unwrap());
}

// Composite Simpson rule on [0,1].
fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn preset_expected_counts_match_quadrature() {
    // Separable integrands: product of one-dimensional integrals.
    let ex1 = simpson(|x| (5.0 + 0.5 * x).exp(), 2000) * simpson(|t| 5.0 * t, 2000);
    assert!((Preset::PoissonBernoulli.expected_count() - ex1).abs() < 1e-6 * ex1);
    assert!((ex1 - 481.39).abs() < 0.01);
    let e = simpson(|y| (-0.5 * y).exp(), 2000);
    let ex2 = 750.0 * e * e;
    assert!((Preset::LgcpBernoulli.expected_count() - ex2).abs() < 1e-6 * ex2);
    let e3 = simpson(|y| (-1.5 * y).exp(), 2000);
    let ex3 = ex1 + 750.0 * e3 * e3;
    assert!((Preset::Bivariate.expected_count() - ex3).abs() < 1e-6 * ex3);
}

#[test]
fn example_one_mean_count() {
    let sim = PresetSimulator::new(Preset::PoissonBernoulli).unwrap();
    let xs: Vec<f64> = (0..200)
        .map(|s| sim.simulate(s).unwrap().len() as f64)
        .collect();
    let (mean, se) = mean_se(&xs);
    let want = Preset::PoissonBernoulli.expected_count();
    assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want}");
}

#[test]
fn degenerate_covariance_gives_mean_field() {
    let cov = CovarianceModel::new(
        CovKind::Constant { value: 0.0 },
        CovKind::Constant { value: 0.0 },
    )
    .unwrap();
    let grid = Grid::new(Window::unit(2), vec![6, 6], 4).unwrap();
    let mean = |x: &[f64], t: f64| x[0] + 2.0 * t;
    let f = sim_grf(&mean, &cov, grid.clone(), 3).unwrap();
    for (c, v) in f.values.iter().enumerate() {
        let (x, t) = grid.cell_center(c);
        assert!((v - mean(&x, t)).abs() < 1e-3);
    }
}

#[test]
fn grid_guard() {
    let cov = Preset::field_covariance();
    let grid = Grid::new(Window::unit(2), vec![30, 30], 10).unwrap();
    assert!(GrfSampler::new(&|_: &[f64], _| 0.0, &cov, grid).is_err());
}

#[test]
fn whittle_matern_marginal_variance() {
    let cov = Preset::field_covariance();
    let grid = Grid::new(Window::unit(2), vec![10, 10], 5).unwrap();
    let s = GrfSampler::new(&|_: &[f64], _| 0.0, &cov, grid).unwrap();
    let mut acc = 0.0;
    let mut n = 0usize;
    for seed in 0..100 {
        for v in s.sample(seed).values {
            acc += v * v;
            n += 1;
        }
    }
    let var = acc / n as f64;
    assert!(
        (var - SIGMA2_TEST).abs() < 0.2 * SIGMA2_TEST,
        "variance {var}"
    );
}

const SIGMA2_TEST: f64 = 1.0 / 16.0;

#[test]
fn exponential_correlation_decays() {
    let cov = CovarianceModel::new(
        CovKind::Exponential { scale: 0.2 },
        CovKind::Constant { value: 1.0 },
    )
    .unwrap();
    let n = 12;
    let grid = Grid::new(Window::unit(2), vec![n, n], 1).unwrap();
    let s = GrfSampler::new(&|_: &[f64], _| 0.0, &cov, grid).unwrap();
    let lags = [1usize, 2, 4, 6, 8];
    let mut sums = vec![0.0; lags.len()];
    let mut counts = vec![0usize; lags.len()];
    for seed in 0..100 {
        let f = s.sample(seed).values;
        for row in 0..n {
            for (li, &k) in lags.iter().enumerate() {
                for i in 0..n - k {
                    sums[li] += f[row * n + i] * f[row * n + i + k];
                    counts[li] += 1;
                }
            }
        }
    }
    let corr: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    for w in corr.windows(2) {
        assert!(w[0] > w[1], "{corr:?}");
    }
    let theory = (-(1.0 / n as f64) / 0.2f64).exp();
    assert!((corr[0] - theory).abs() < 0.1, "{} vs {theory}", corr[0]);
}

#[test]
fn lgcp_without_field_is_poisson() {
    let cov = CovarianceModel::new(
        CovKind::Constant { value: 0.0 },
        CovKind::Constant { value: 0.0 },
    )
    .unwrap();
    let grid = Grid::new(Window::unit(2), vec![5, 5], 5).unwrap();
    let mean = |_: &[f64], _| 100f64.ln();
    let xs: Vec<f64> = (0..300)
        .map(|s| sim_lgcp(&mean, &cov, grid.clone(), s).unwrap().len() as f64)
        .collect();
    let (m, _) = mean_se(&xs);
    let half = 3.0 * (100.0f64 / 300.0).sqrt();
    assert!((m - 100.0).abs() < half, "{m}");
}

#[test]
fn lgcp_mean_and_overdispersion() {
    let sim = PresetSimulator::new(Preset::LgcpBernoulli).unwrap();
    let xs: Vec<f64> = (0..100)
        .map(|s| sim.simulate(s).unwrap().len() as f64)
        .collect();
    let (mean, se) = mean_se(&xs);
    let want = Preset::LgcpBernoulli.expected_count();
    assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want}");
    let var = se * se * xs.len() as f64;
    assert!(var > mean, "variance {var} vs mean {mean}");
}

#[test]
fn iid_marks() {
    let g = sim_poisson(&constant_field(1000.0), 4).unwrap();
    let n = g.len() as f64;
    let p = assign_marks_iid(
        g.clone(),
        &MarkLaw::Bernoulli(0.4),
        MarkSpace::counting(2).unwrap(),
        5,
    )
    .unwrap();
    let frac = p.restrict_marks(&MarkSet::labels(&[1])).len() as f64 / n;
    assert!((frac - 0.4).abs() < 0.05, "{frac}");
    let all = assign_marks_iid(
        g.clone(),
        &MarkLaw::Bernoulli(1.0),
        MarkSpace::counting(2).unwrap(),
        5,
    )
    .unwrap();
    assert!(all.marks().iter().all(|&m| m == 1.0));
    let a = assign_marks_iid(
        g.clone(),
        &MarkLaw::UniformInterval { lo: 0.0, hi: 1.0 },
        MarkSpace::interval(0.0, 1.0).unwrap(),
        8,
    )
    .unwrap();
    let b = assign_marks_iid(
        g.clone(),
        &MarkLaw::UniformInterval { lo: 0.0, hi: 1.0 },
        MarkSpace::interval(0.0, 1.0).unwrap(),
        8,
    )
    .unwrap();
    assert_eq!(a, b);
    let t = assign_marks_iid(
        g,
        &MarkLaw::UserTable(vec![0.0, 0.0, 1.0]),
        MarkSpace::counting(3).unwrap(),
        1,
    )
    .unwrap();
    assert!(t.marks().iter().all(|&m| m == 3.0));
}

fn line_ground(xs: &[f64], window: Window) -> GroundPattern {
    GroundPattern {
        points: xs
            .iter()
            .enumerate()
            .map(|(i, &x)| SpaceTimePoint {
                x: vec![x, 0.5],
                t: 0.01 * i as f64,
            })
            .collect(),
        window,
    }
}

#[test]
fn geostat_marks_coincident_points_agree() {
    let g = GroundPattern {
        points: vec![
            SpaceTimePoint {
                x: vec![0.3, 0.3],
                t: 0.2,
            },
            SpaceTimePoint {
                x: vec![0.3, 0.3],
                t: 0.6,
            },
        ],
        window: Window::unit(2),
    };
    let p = assign_marks_geostat(
        g,
        &Preset::mark_covariance(),
        MarkSpace::interval(-8.0, 8.0).unwrap(),
        2,
    )
    .unwrap();
    let m = p.marks();
    assert!((m[0] - m[1]).abs() < 1e-4, "{m:?}");
}

#[test]
fn geostat_degenerate_field_is_jitter_noise() {
    let cov = CovarianceModel::new(
        CovKind::Constant { value: 0.0 },
        CovKind::Constant { value: 1.0 },
    )
    .unwrap();
    let g = line_ground(&[0.1, 0.2, 0.3, 0.4], Window::unit(2));
    let p = assign_marks_geostat(g, &cov, MarkSpace::interval(-1.0, 1.0).unwrap(), 3).unwrap();
    let m = p.marks();
    assert!(m.iter().all(|v| v.abs() < 1e-3));
    assert!(m[0] != m[1]);
}

#[test]
fn geostat_correlogram_decreases() {
    let w = Window::new(
        vec![
            crate::geometry::Interval::new(0.0, 5.0).unwrap(),
            crate::geometry::Interval::new(0.0, 1.0).unwrap(),
        ],
        crate::geometry::Interval::new(0.0, 1.0).unwrap(),
    )
    .unwrap();
    let xs: Vec<f64> = (0..17).map(|i| 0.25 * i as f64 + 0.5).collect();
    let lags = [1usize, 2, 4, 8];
    let mut sums = vec![0.0; lags.len()];
    let mut counts = vec![0usize; lags.len()];
    for seed in 0..100 {
        let p = assign_marks_geostat(
            line_ground(&xs, w.clone()),
            &Preset::mark_covariance(),
            MarkSpace::interval(-8.0, 8.0).unwrap(),
            seed,
        )
        .unwrap();
        let m = p.marks();
        for (li, &k) in lags.iter().enumerate() {
            for i in 0..m.len() - k {
                sums[li] += m[i] * m[i + k];
                counts[li] += 1;
            }
        }
    }
    let corr: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    for w in corr.windows(2) {
        assert!(w[0] > w[1], "{corr:?}");
    }
}

#[test]
fn superposition() {
    let w = Window::unit(2);
    let a = line_ground(&[0.1, 0.2, 0.3], w.clone());
    let b = line_ground(&[0.15, 0.25, 0.35, 0.45, 0.55], w.clone());
    let ms = MarkSpace::counting(2).unwrap();
    let s = superpose(&[a.clone(), b.clone()], ms.clone()).unwrap();
    assert_eq!(s.len(), 8);
    assert_eq!(s.project_marks(&MarkSet::labels(&[1])).points, a.points);
    let empty = GroundPattern {
        points: vec![],
        window: w.clone(),
    };
    let s2 = superpose(&[empty, b.clone()], ms.clone()).unwrap();
    assert_eq!(s2.len(), 5);
    assert!(s2.marks().iter().all(|&m| m == 2.0));
    let other = GroundPattern {
        points: vec![],
        window: Window::unit(2).scale(2.0, 1.0),
    };
    assert!(superpose(&[a, other], ms).is_err());
}

#[test]
fn presets_are_deterministic() {
    for preset in Preset::ALL {
        let sim = PresetSimulator::with_grid(preset, 8).unwrap();
        let a = sim.simulate(17).unwrap();
        assert_eq!(a, sim.simulate(17).unwrap());
        assert!(!a.is_empty());
        assert_eq!(Preset::from_name(preset.name()), Some(preset));
    }
    assert_eq!(Preset::from_name("nope"), None);
}
