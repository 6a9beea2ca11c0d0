//! Run configuration: a TOML document validated against the active command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stmark_core::geometry::{Interval, Window};
use stmark_core::intensity::{AuditStrata, Quadrature, SeparableOptions, SeparableSetup};
use stmark_core::pattern::{MarkReference, MarkSet, MarkSpace};
use stmark_core::second_order::{ErosionMode, HamiltonScenario, KOptions};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Intensity,
    K,
    Test,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Intensity => "intensity",
            Command::K => "k",
            Command::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub window: Option<WindowConfig>,
    pub marks: Option<MarksConfig>,
    pub input: Option<InputConfig>,
    pub simulate: Option<SimulateConfig>,
    pub intensity: Option<IntensityConfig>,
    pub k: Option<KConfig>,
    pub test: Option<KConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// One `[lo, hi]` pair per spatial axis.
    pub spatial: Vec<[f64; 2]>,
    pub temporal: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceConfig {
    Lebesgue,
    Normalized,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum MarksConfig {
    Interval {
        lo: f64,
        hi: f64,
        #[serde(default = "lebesgue")]
        reference: ReferenceConfig,
    },
    /// Labels `1..=weights.len()` with atom masses `weights`.
    Labels { weights: Vec<f64> },
}

fn lebesgue() -> ReferenceConfig {
    ReferenceConfig::Lebesgue
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub catalog: PathBuf,
    /// Reject the catalog instead of dropping invalid or duplicate rows.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: String,
    /// Cells per axis of the Gaussian field grid.
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    #[serde(default = "ground_nodes")]
    pub ground_nodes: usize,
    #[serde(default = "mark_nodes")]
    pub mark_nodes: usize,
    #[serde(default = "yes")]
    pub refine: bool,
}

fn ground_nodes() -> usize {
    Quadrature::default().ground_nodes
}

fn mark_nodes() -> usize {
    Quadrature::default().mark_nodes
}

fn yes() -> bool {
    true
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = Quadrature::default();
        Self {
            ground_nodes: q.ground_nodes,
            mark_nodes: q.mark_nodes,
            refine: q.refine,
        }
    }
}

impl QuadratureConfig {
    pub fn resolve(&self) -> CliResult<Quadrature> {
        if self.ground_nodes == 0 || self.mark_nodes == 0 {
            return Err(CliError::Config(
                "quadrature node counts must be positive".into(),
            ));
        }
        Ok(Quadrature {
            ground_nodes: self.ground_nodes,
            mark_nodes: self.mark_nodes,
            refine: self.refine,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorConfig {
    Ground,
    Marked,
    SeparableCommon,
    SeparableNoncommon,
    SeparableTimeMark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityConfig {
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub euclidean_time_mark: bool,
    #[serde(default)]
    pub mark_is_reference: bool,
    /// Evaluation cells per spatial axis followed by time.
    pub grid: Option<Vec<usize>>,
    /// Marks at which marked estimates are evaluated.
    pub mark_values: Option<Vec<f64>>,
    pub audit_strata: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum MarkSetConfig {
    Full,
    Closed([f64; 2]),
    LeftOpen([f64; 2]),
    Labels(Vec<u32>),
}

impl MarkSetConfig {
    pub fn resolve(&self) -> CliResult<MarkSet> {
        let check = |[a, b]: [f64; 2]| {
            if a.is_finite() && b.is_finite() && a <= b {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "mark set bounds [{a}, {b}] must be finite and ordered"
                )))
            }
        };
        Ok(match self {
            MarkSetConfig::Full => MarkSet::Full,
            MarkSetConfig::Closed(v) => {
                check(*v)?;
                MarkSet::closed(v[0], v[1])
            }
            MarkSetConfig::LeftOpen(v) => {
                check(*v)?;
                MarkSet::left_open(v[0], v[1])
            }
            MarkSetConfig::Labels(ls) => {
                if ls.is_empty() {
                    return Err(CliError::Config("label set is empty".into()));
                }
                MarkSet::labels(ls)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Known,
    EstimatedMarks,
    EstimatedWindow,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErosionConfig {
    PerCell,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankConfig {
    Minmax,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationWeightsConfig {
    Rebuild,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub n: usize,
    #[serde(default = "retention")]
    pub retention: f64,
}

fn retention() -> f64 {
    stmark_core::second_order::DEFAULT_RETENTION
}

/// Shared by the `[k]` and `[test]` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KConfig {
    pub c: MarkSetConfig,
    pub d: MarkSetConfig,
    pub r: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,
    pub scenario: Option<ScenarioConfig>,
    pub erosion: Option<ErosionConfig>,
    /// `preset:<name>`, `stationary` or a Voronoi estimator name.
    pub weights: String,
    pub quadrature: Option<QuadratureConfig>,
    pub euclidean_time_mark: Option<bool>,
    pub mark_is_reference: Option<bool>,
    pub smoothing: Option<SmoothingConfig>,
    pub permutations: Option<usize>,
    pub rank: Option<RankConfig>,
    pub alpha: Option<f64>,
    pub permutation_weights: Option<PermutationWeightsConfig>,
}

/// Where intensity weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsChoice {
    Preset(stmark_core::simulate::Preset),
    Stationary,
    Voronoi(EstimatorConfig),
}

impl KConfig {
    pub fn weights_choice(&self) -> CliResult<WeightsChoice> {
        if let Some(name) = self.weights.strip_prefix("preset:") {
            return stmark_core::simulate::Preset::from_name(name)
                .map(WeightsChoice::Preset)
                .ok_or_else(|| CliError::Config(format!("unknown preset \"{name}\"")));
        }
        if self.weights == "stationary" {
            return Ok(WeightsChoice::Stationary);
        }
        let est: EstimatorConfig =
            EstimatorConfig::deserialize(serde::de::value::StrDeserializer::<
                serde::de::value::Error,
            >::new(&self.weights))
            .map_err(|_| CliError::Config(format!("unknown weights \"{}\"", self.weights)))?;
        if est == EstimatorConfig::Ground {
            return Err(CliError::Config(
                "ground intensities cannot weight marked pairs".into(),
            ));
        }
        Ok(WeightsChoice::Voronoi(est))
    }

    pub fn options(&self) -> KOptions {
        KOptions {
            scenario: match self.scenario.unwrap_or(ScenarioConfig::EstimatedMarks) {
                ScenarioConfig::Known => HamiltonScenario::Known,
                ScenarioConfig::EstimatedMarks => HamiltonScenario::EstimatedMarks,
                ScenarioConfig::EstimatedWindow => HamiltonScenario::EstimatedWindow,
                ScenarioConfig::Ratio => HamiltonScenario::Ratio,
            },
            erosion: match self.erosion.unwrap_or(ErosionConfig::PerCell) {
                ErosionConfig::PerCell => ErosionMode::PerCell,
                ErosionConfig::Fixed => ErosionMode::Fixed,
            },
            ..Default::default()
        }
    }

    pub fn separable_options(&self) -> SeparableOptions {
        SeparableOptions {
            euclidean_tm: self.euclidean_time_mark.unwrap_or(false),
            mark_is_reference: self.mark_is_reference.unwrap_or(false),
        }
    }

    pub fn quadrature(&self) -> CliResult<Quadrature> {
        self.quadrature.unwrap_or_default().resolve()
    }
}

pub fn separable_setup(e: EstimatorConfig) -> Option<SeparableSetup> {
    match e {
        EstimatorConfig::SeparableCommon => Some(SeparableSetup::CommonMark),
        EstimatorConfig::SeparableNoncommon => Some(SeparableSetup::NonSeparableCommonMark),
        EstimatorConfig::SeparableTimeMark => Some(SeparableSetup::TimeMark),
        _ => None,
    }
}

impl WindowConfig {
    pub fn resolve(&self) -> CliResult<Window> {
        let iv = |[a, b]: [f64; 2]| Interval::new(a, b).map_err(CliError::from);
        let spatial = self
            .spatial
            .iter()
            .map(|&v| iv(v))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Window::new(spatial, iv(self.temporal)?)?)
    }
}

impl MarksConfig {
    pub fn resolve(&self) -> CliResult<MarkSpace> {
        Ok(match self {
            MarksConfig::Interval { lo, hi, reference } => {
                let r = match reference {
                    ReferenceConfig::Lebesgue => MarkReference::Lebesgue,
                    ReferenceConfig::Normalized => MarkReference::NormalizedLebesgue,
                    ReferenceConfig::Empirical => MarkReference::Empirical,
                };
                MarkSpace::interval_with(*lo, *hi, r)?
            }
            MarksConfig::Labels { weights } => MarkSpace::labels(weights.clone())?,
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Applies command-line overrides and checks the sections the command needs.
    pub fn resolve(
        mut self,
        cmd: Command,
        seed: Option<u64>,
        out: Option<PathBuf>,
        threads: Option<usize>,
    ) -> CliResult<Self> {
        self.seed = Some(seed.unwrap_or(self.seed()));
        self.out = Some(
            out.or(self.out.take())
                .unwrap_or_else(|| PathBuf::from("out")),
        );
        if let Some(t) = threads {
            self.threads = Some(t);
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        let cfg = |m: String| Err(CliError::Config(m));
        let present = [
            ("simulate", self.simulate.is_some()),
            ("intensity", self.intensity.is_some()),
            ("k", self.k.is_some()),
            ("test", self.test.is_some()),
        ];
        for (name, is) in present {
            if is && name != cmd.name() {
                return cfg(format!(
                    "section [{name}] does not belong to the {} command",
                    cmd.name()
                ));
            }
        }
        match cmd {
            Command::Simulate => {
                if self.simulate.is_none() {
                    return cfg("missing [simulate] section".into());
                }
                for (name, is) in [
                    ("window", self.window.is_some()),
                    ("marks", self.marks.is_some()),
                    ("input", self.input.is_some()),
                ] {
                    if is {
                        return cfg(format!(
                            "[{name}] is fixed by the preset and not accepted by simulate"
                        ));
                    }
                }
            }
            _ => {
                for (name, is) in [
                    ("window", self.window.is_some()),
                    ("marks", self.marks.is_some()),
                    ("input", self.input.is_some()),
                ] {
                    if !is {
                        return cfg(format!("missing [{name}] section"));
                    }
                }
                let section = match cmd {
                    Command::Intensity => self.intensity.is_some(),
                    Command::K => self.k.is_some(),
                    _ => self.test.is_some(),
                };
                if !section {
                    return cfg(format!("missing [{}] section", cmd.name()));
                }
            }
        }
        if let Some(k) = &self.k {
            for (name, is) in [
                ("permutations", k.permutations.is_some()),
                ("rank", k.rank.is_some()),
                ("alpha", k.alpha.is_some()),
                ("permutation_weights", k.permutation_weights.is_some()),
            ] {
                if is {
                    return cfg(format!("[k] does not accept {name}"));
                }
            }
        }
        if let Some(t) = &self.test {
            if t.smoothing.is_some() {
                return cfg("[test] does not accept smoothing".into());
            }
            if t.weights == "stationary" {
                return cfg("[test] needs intensity weights; stationary is not available".into());
            }
            if let Some(a) = t.alpha {
                if !(a > 0.0 && a < 1.0) {
                    return cfg("alpha must lie in (0, 1)".into());
                }
            }
        }
        for k in [&self.k, &self.test].into_iter().flatten() {
            k.weights_choice()?;
        }
        self.fill_defaults()?;
        Ok(self)
    }

    /// Writes every defaulted parameter into the document so the echo is complete.
    fn fill_defaults(&mut self) -> CliResult<()> {
        let window = match &self.window {
            Some(w) => Some(w.resolve()?),
            None => None,
        };
        if let (Some(ic), Some(w)) = (self.intensity.as_mut(), &window) {
            if ic.grid.is_none() {
                let mut g = vec![crate::commands::DEFAULT_GRID_CELLS; w.dim()];
                g.push(crate::commands::DEFAULT_TIME_CELLS);
                ic.grid = Some(g);
            }
            if ic.audit_strata.is_none() {
                let s = AuditStrata::default();
                ic.audit_strata = Some([s.ground, s.mark]);
            }
        }
        if let Some(sc) = self.simulate.as_mut() {
            sc.grid
                .get_or_insert(stmark_core::simulate::presets::DEFAULT_GRID);
        }
        let is_test = self.test.is_some();
        for k in [self.k.as_mut(), self.test.as_mut()].into_iter().flatten() {
            if let Some(w) = &window {
                let (r, t) = stmark_core::second_order::default_lags(w);
                k.r.get_or_insert(r);
                k.t.get_or_insert(t);
            }
            k.scenario.get_or_insert(ScenarioConfig::EstimatedMarks);
            k.erosion.get_or_insert(ErosionConfig::PerCell);
            if matches!(k.weights_choice()?, WeightsChoice::Voronoi(_)) {
                k.quadrature.get_or_insert_with(QuadratureConfig::default);
                k.euclidean_time_mark.get_or_insert(false);
                k.mark_is_reference.get_or_insert(false);
            }
            if is_test {
                k.permutations
                    .get_or_insert(stmark_core::inference::DEFAULT_PERMUTATIONS);
                let rank = *k.rank.get_or_insert(RankConfig::Minmax);
                if rank == RankConfig::Pointwise {
                    k.alpha.get_or_insert(stmark_core::inference::DEFAULT_ALPHA);
                }
                k.permutation_weights
                    .get_or_insert(PermutationWeightsConfig::Rebuild);
            }
        }
        Ok(())
    }

    pub fn audit_strata(&self) -> AuditStrata {
        match self.intensity.as_ref().and_then(|i| i.audit_strata) {
            Some([g, m]) => AuditStrata { ground: g, mark: m },
            None => AuditStrata::default(),
        }
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
