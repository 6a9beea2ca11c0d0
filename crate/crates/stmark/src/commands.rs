//! The four batch commands.

use std::path::{Path, PathBuf};

use serde_json::json;
use stmark_core::inference::{
    random_labelling_test, EnvelopeRank, PermutationWeights, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS,
};
use stmark_core::intensity::{
    mass_audit_ground, mass_audit_marked, mass_audit_separable, voronoi_ground, voronoi_marked,
    voronoi_separable, MarkedIntensity, VoronoiEstimate,
};
use stmark_core::pattern::{IngestReport, MarkSpace, MarkedPattern};
use stmark_core::second_order::{
    default_lags, k_inhom, k_smoothed, k_stationary, HamiltonScenario, Plugin, PluginWeights,
    PointWeights, WeightsBuilder,
};
use stmark_core::simulate::presets::DEFAULT_GRID;
use stmark_core::simulate::{Preset, PresetSimulator};

use crate::catalog::{read_catalog, spatial_columns, write_catalog, write_file};
use crate::config::{
    separable_setup, Command, EstimatorConfig, KConfig, PermutationWeightsConfig, RankConfig,
    RunConfig, WeightsChoice,
};
use crate::error::{CliError, CliResult};
use crate::output::{
    envelope_csv, envelope_json, ingest_json, json_text, k_csv, k_json, mark_space_json,
    test_summary,
};

pub const DEFAULT_GRID_CELLS: usize = 20;
pub const DEFAULT_TIME_CELLS: usize = 10;
pub const DEFAULT_INTERVAL_MARK_VALUES: usize = 5;

/// Runs `cmd` on a resolved configuration and returns the files written.
pub fn run(cmd: Command, cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let body = || match cmd {
        Command::Simulate => simulate(cfg),
        Command::Intensity => intensity(cfg),
        Command::K => k(cfg),
        Command::Test => test(cfg),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(body),
        None => body(),
    }
}

struct Out {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Out {
    fn new(cfg: &RunConfig) -> CliResult<Self> {
        let dir = cfg
            .out
            .clone()
            .expect("resolved config has an output directory");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut out = Self {
            dir,
            written: Vec::new(),
        };
        out.write("config.toml", cfg.echo().as_bytes())?;
        Ok(out)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        write_file(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }
}

fn simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let sc = cfg.simulate.as_ref().expect("validated");
    let preset = Preset::from_name(&sc.preset)
        .ok_or_else(|| CliError::Config(format!("unknown preset \"{}\"", sc.preset)))?;
    let grid = sc.grid.unwrap_or(DEFAULT_GRID);
    let sim = PresetSimulator::with_grid(preset, grid)?;
    let p = sim.simulate(cfg.seed())?;
    let mut out = Out::new(cfg)?;
    let path = out.path("catalog.csv");
    write_catalog(&path, &p)?;
    let meta = json!({
        "preset": preset.name(),
        "seed": cfg.seed(),
        "grid": grid,
        "n_points": p.len(),
        "expected_count": preset.expected_count(),
        "mark_space": mark_space_json(p.mark_space()),
    });
    out.write("metadata.json", json_text(&meta).as_bytes())?;
    Ok(out.written)
}

fn load(cfg: &RunConfig) -> CliResult<(MarkedPattern, IngestReport)> {
    let window = cfg.window.as_ref().expect("validated").resolve()?;
    let marks = cfg.marks.as_ref().expect("validated").resolve()?;
    let input = cfg.input.as_ref().expect("validated");
    read_catalog(&input.catalog, &window, &marks, input.strict)
}

fn centres(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64)
        .collect()
}

fn mark_values(ms: &MarkSpace, given: Option<&Vec<f64>>) -> Vec<f64> {
    if let Some(v) = given {
        return v.clone();
    }
    match ms {
        MarkSpace::Labels { weights } => (1..=weights.len()).map(|k| k as f64).collect(),
        MarkSpace::Interval { lo, hi, .. } => centres(*lo, *hi, DEFAULT_INTERVAL_MARK_VALUES),
    }
}

/// Cartesian product of the axes, first axis slowest.
fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|p| ax.iter().map(move |&v| [p.clone(), vec![v]].concat()))
            .collect();
    }
    out
}

fn cells_csv(est: &VoronoiEstimate, n: usize) -> String {
    let mut s = String::from("point_index,cell_measure\n");
    for i in 0..n {
        s.push_str(&format!("{i},{}\n", est.cell_measure_of_point(i)));
    }
    s
}

fn intensity(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let ic = cfg.intensity.as_ref().expect("validated");
    let (p, ingest) = load(cfg)?;
    if p.is_empty() {
        return Err(stmark_core::Error::EmptyPattern.into());
    }
    let q = ic.quadrature.resolve()?;
    let w = p.window();
    let d = p.dim();
    let grid = ic.grid.clone().unwrap_or_else(|| {
        let mut g = vec![DEFAULT_GRID_CELLS; d];
        g.push(DEFAULT_TIME_CELLS);
        g
    });
    if grid.len() != d + 1 || grid.contains(&0) {
        return Err(CliError::Config(format!(
            "grid needs {} positive cell counts (space then time)",
            d + 1
        )));
    }
    let mut axes: Vec<Vec<f64>> = w
        .spatial
        .iter()
        .zip(&grid)
        .map(|(iv, &n)| centres(iv.lo, iv.hi, n))
        .collect();
    axes.push(centres(w.temporal.lo, w.temporal.hi, grid[d]));
    let mut header = spatial_columns(d);
    header.push("t".into());
    let strata = cfg.audit_strata();
    let seed = cfg.seed();
    let mut out = Out::new(cfg)?;
    let mut csv = String::new();
    let (audit, floor_hits, refine) = match ic.estimator {
        EstimatorConfig::Ground => {
            let est = voronoi_ground(&p, &q)?;
            csv.push_str(&format!("{},lambda_hat\n", header.join(",")));
            for node in product(&axes) {
                csv.push_str(&format!("{},{}\n", join(&node), est.eval(&node)));
            }
            out.write("cells.csv", cells_csv(&est, p.len()).as_bytes())?;
            (
                mass_audit_ground(&p, &est, strata, seed),
                est.floor_hits(),
                est.refine_factor(),
            )
        }
        e => {
            let marked: Box<dyn MarkedIntensity>;
            let mut cells = None;
            let mut refine = None;
            let audit;
            if let Some(setup) = separable_setup(e) {
                let opts = stmark_core::intensity::SeparableOptions {
                    euclidean_tm: ic.euclidean_time_mark,
                    mark_is_reference: ic.mark_is_reference,
                };
                let est = voronoi_separable(&p, setup, opts, &q)?;
                audit = mass_audit_separable(&p, &est, strata, seed);
                marked = Box::new(est);
            } else {
                let est = voronoi_marked(&p, &q)?;
                cells = Some(cells_csv(&est, p.len()));
                refine = est.refine_factor();
                audit = mass_audit_marked(&p, &est, strata, seed);
                marked = Box::new(est);
            }
            header.push("m".into());
            csv.push_str(&format!("{},lambda_hat\n", header.join(",")));
            axes.push(mark_values(p.mark_space(), ic.mark_values.as_ref()));
            for node in product(&axes) {
                let v = marked.eval(&node[..d], node[d], node[d + 1]);
                csv.push_str(&format!("{},{}\n", join(&node), v));
            }
            if let Some(c) = cells {
                out.write("cells.csv", c.as_bytes())?;
            }
            (audit, 0, refine)
        }
    };
    out.write("intensity.csv", csv.as_bytes())?;
    let line = format!(
        "mass audit: n = {}, integral = {}, relative error = {}, sum of 1/lambda = {}, reference measure = {}, relative error = {}\n",
        audit.n_points,
        audit.integral,
        audit.rel_error,
        audit.hamilton_sum,
        audit.reference_measure,
        audit.hamilton_rel_error
    );
    print!("{line}");
    out.write("audit.txt", line.as_bytes())?;
    let meta = json!({
        "estimator": serde_json::to_value(ic.estimator).unwrap(),
        "seed": seed,
        "n_points": p.len(),
        "ingest": ingest_json(&ingest),
        "floor_hits": floor_hits,
        "refine_factor": refine,
        "audit": {
            "integral": audit.integral,
            "rel_error": audit.rel_error,
            "hamilton_sum": audit.hamilton_sum,
            "reference_measure": audit.reference_measure,
            "hamilton_rel_error": audit.hamilton_rel_error,
            "samples": audit.samples,
        },
    });
    out.write("metadata.json", json_text(&meta).as_bytes())?;
    Ok(out.written)
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Known model intensities of a preset, thinned by the retention probability.
struct PresetWeights {
    preset: Preset,
}

impl WeightsBuilder for PresetWeights {
    fn build(&self, p: &MarkedPattern, retention: f64) -> stmark_core::Result<PointWeights> {
        let pr = self.preset;
        Ok(
            PointWeights::from_fn(p, |x, t, m| retention * pr.marked_intensity(x, t, m))
                .with_ground_fn(p, |x, t| retention * pr.ground_intensity(x, t)),
        )
    }
}

fn builder(kc: &KConfig, choice: WeightsChoice) -> CliResult<Box<dyn WeightsBuilder>> {
    Ok(match choice {
        WeightsChoice::Preset(preset) => Box::new(PresetWeights { preset }),
        WeightsChoice::Voronoi(e) => {
            let plugin = match separable_setup(e) {
                Some(s) => Plugin::Separable(s, kc.separable_options()),
                None => Plugin::Marked,
            };
            let scenario = kc.options().scenario;
            Box::new(PluginWeights {
                plugin,
                quadrature: kc.quadrature()?,
                ground: matches!(
                    scenario,
                    HamiltonScenario::EstimatedWindow | HamiltonScenario::Ratio
                ),
            })
        }
        WeightsChoice::Stationary => unreachable!("stationary weights have no builder"),
    })
}

fn lags(kc: &KConfig, p: &MarkedPattern) -> (Vec<f64>, Vec<f64>) {
    let (r0, t0) = default_lags(p.window());
    (kc.r.clone().unwrap_or(r0), kc.t.clone().unwrap_or(t0))
}

fn k(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let kc = cfg.k.as_ref().expect("validated");
    let (p, ingest) = load(cfg)?;
    let (c, d) = (kc.c.resolve()?, kc.d.resolve()?);
    let (r, t) = lags(kc, &p);
    let opts = kc.options();
    let seed = cfg.seed();
    let choice = kc.weights_choice()?;
    let surface = match choice {
        WeightsChoice::Stationary => k_stationary(&p, &c, &d, &r, &t, &opts)?,
        _ => {
            let w = builder(kc, choice)?.build(&p, 1.0)?;
            k_inhom(&p, &c, &d, &r, &t, &w, &opts)?
        }
    };
    let mut out = Out::new(cfg)?;
    out.write("k.csv", k_csv(&surface).as_bytes())?;
    let mut meta = k_json(&surface, seed, p.len());
    meta["ingest"] = ingest_json(&ingest);
    if let Some(sm) = kc.smoothing {
        if choice == WeightsChoice::Stationary {
            return Err(CliError::Config("smoothing needs intensity weights".into()));
        }
        let b = builder(kc, choice)?;
        let s = k_smoothed(
            &p,
            &c,
            &d,
            &r,
            &t,
            sm.retention,
            sm.n,
            b.as_ref(),
            seed,
            &opts,
        )?;
        out.write("k_smoothed.csv", k_csv(&s).as_bytes())?;
        meta["smoothed"] = k_json(&s, seed, p.len());
    }
    out.write("k.json", json_text(&meta).as_bytes())?;
    Ok(out.written)
}

fn test(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let tc = cfg.test.as_ref().expect("validated");
    let (p, ingest) = load(cfg)?;
    let (c, d) = (tc.c.resolve()?, tc.d.resolve()?);
    let (r, t) = lags(tc, &p);
    let opts = tc.options();
    let b = builder(tc, tc.weights_choice()?)?;
    let rank = match tc.rank.unwrap_or(RankConfig::Minmax) {
        RankConfig::Minmax => EnvelopeRank::MinMax,
        RankConfig::Pointwise => EnvelopeRank::Pointwise {
            alpha: tc.alpha.unwrap_or(DEFAULT_ALPHA),
        },
    };
    let mode = match tc
        .permutation_weights
        .unwrap_or(PermutationWeightsConfig::Rebuild)
    {
        PermutationWeightsConfig::Rebuild => PermutationWeights::Rebuild,
        PermutationWeightsConfig::Fixed => PermutationWeights::Fixed,
    };
    let n = tc.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
    let e = random_labelling_test(
        &p,
        &c,
        &d,
        &r,
        &t,
        b.as_ref(),
        mode,
        n,
        rank,
        cfg.seed(),
        &opts,
    )?;
    let mut out = Out::new(cfg)?;
    out.write("envelope.csv", envelope_csv(&e).as_bytes())?;
    let mut meta = envelope_json(&e);
    meta["c"] = json!(c.to_string());
    meta["d"] = json!(d.to_string());
    meta["n_points"] = json!(p.len());
    meta["ingest"] = ingest_json(&ingest);
    out.write("envelope.json", json_text(&meta).as_bytes())?;
    out.write(
        "summary.txt",
        test_summary(&e, &c.to_string(), &d.to_string()).as_bytes(),
    )?;
    Ok(out.written)
}

/// Loads, resolves and runs; the entry point of the binary.
pub fn run_from_file(
    cmd: Command,
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> CliResult<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let mut cfg = cfg.resolve(cmd, seed, out, threads)?;
    // Relative catalog paths are taken relative to the config file.
    if let Some(input) = cfg.input.as_mut() {
        if input.catalog.is_relative() {
            if let Some(dir) = config.parent() {
                input.catalog = dir.join(&input.catalog);
            }
        }
    }
    run(cmd, &cfg)
}
