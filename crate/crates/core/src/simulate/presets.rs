//! The four reference models: Poisson with Bernoulli marks, randomly labelled
//! LGCP, a bivariate Poisson/LGCP superposition and a geostatistically marked LGCP.

use alloc::vec;

use crate::error::Result;
use crate::geometry::Window;
use crate::math::{derive_seed, normal_pdf};
use crate::pattern::{MarkSpace, MarkedPattern};

use super::{
    assign_marks_geostat, assign_marks_iid, lgcp_from_field, sim_poisson, superpose, CovKind,
    CovarianceModel, GrfSampler, Grid, IntensityField, MarkLaw,
};

pub const SIGMA2: f64 = 1.0 / 16.0;
pub const BERNOULLI_P: f64 = 0.4;
pub const LGCP_BASE: f64 = 750.0;
/// Smoothness and scale of the spatial Whittle-Matern factor.
pub const WM_NU: f64 = 0.5;
pub const WM_C: f64 = 1.0;
/// Real marks are confined to this interval so that Lebesgue `nu` is finite.
pub const GEOSTAT_MARK_RANGE: (f64, f64) = (-8.0, 8.0);
pub const DEFAULT_GRID: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PoissonBernoulli,
    LgcpBernoulli,
    Bivariate,
    LgcpGeostat,
}

fn poisson_rate(x: &[f64], t: f64) -> f64 {
    5.0 * t * libm::exp(5.0 + 0.5 * x[0])
}

fn lgcp_mean(slope: f64, shift: f64) -> impl Fn(&[f64], f64) -> f64 {
    move |x: &[f64], t: f64| libm::log(LGCP_BASE) - slope * (x[1] + t) + shift
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::PoissonBernoulli,
        Preset::LgcpBernoulli,
        Preset::Bivariate,
        Preset::LgcpGeostat,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::PoissonBernoulli => "poisson-bernoulli",
            Preset::LgcpBernoulli => "lgcp-bernoulli",
            Preset::Bivariate => "bivariate",
            Preset::LgcpGeostat => "lgcp-geostat",
        }
    }

    pub fn window(&self) -> Window {
        Window::unit(2)
    }

    pub fn mark_space(&self) -> MarkSpace {
        match self {
            Preset::LgcpGeostat => {
                MarkSpace::interval(GEOSTAT_MARK_RANGE.0, GEOSTAT_MARK_RANGE.1).unwrap()
            }
            _ => MarkSpace::counting(2).unwrap(),
        }
    }

    pub fn field_covariance() -> CovarianceModel {
        CovarianceModel {
            spatial: CovKind::WhittleMatern {
                sigma2: SIGMA2,
                nu: WM_NU,
                c: WM_C,
            },
            temporal: CovKind::Constant { value: 1.0 },
        }
    }

    pub fn mark_covariance() -> CovarianceModel {
        CovarianceModel {
            spatial: CovKind::Exponential { scale: 1.0 },
            temporal: CovKind::Constant { value: 1.0 },
        }
    }

    /// First-order intensity of the ground process.
    pub fn ground_intensity(&self, x: &[f64], t: f64) -> f64 {
        let e = |slope: f64| LGCP_BASE * libm::exp(-slope * (x[1] + t));
        match self {
            Preset::PoissonBernoulli => poisson_rate(x, t),
            Preset::LgcpBernoulli => e(0.5),
            Preset::Bivariate => poisson_rate(x, t) + e(1.5),
            Preset::LgcpGeostat => e(0.5) * libm::exp(SIGMA2),
        }
    }

    /// First-order intensity of the marked process with respect to `l x nu`.
    pub fn marked_intensity(&self, x: &[f64], t: f64, m: f64) -> f64 {
        let bern = |g: f64| {
            if m == 1.0 {
                g * BERNOULLI_P
            } else {
                g * (1.0 - BERNOULLI_P)
            }
        };
        match self {
            Preset::PoissonBernoulli | Preset::LgcpBernoulli => bern(self.ground_intensity(x, t)),
            Preset::Bivariate => {
                if m == 1.0 {
                    poisson_rate(x, t)
                } else {
                    LGCP_BASE * libm::exp(-1.5 * (x[1] + t))
                }
            }
            Preset::LgcpGeostat => self.ground_intensity(x, t) * normal_pdf(m),
        }
    }

    /// Expected number of points on the unit window.
    pub fn expected_count(&self) -> f64 {
        let poisson = 5.0 * libm::exp(5.0) * (libm::exp(0.5) - 1.0);
        let lgcp = |slope: f64| {
            let f = (1.0 - libm::exp(-slope)) / slope;
            LGCP_BASE * f * f
        };
        match self {
            Preset::PoissonBernoulli => poisson,
            Preset::LgcpBernoulli => lgcp(0.5),
            Preset::Bivariate => poisson + lgcp(1.5),
            Preset::LgcpGeostat => lgcp(0.5) * libm::exp(SIGMA2),
        }
    }
}

/// Draws realizations of a preset; factorizations are built once.
#[derive(Debug)]
pub struct PresetSimulator {
    preset: Preset,
    poisson: Option<IntensityField>,
    field: Option<GrfSampler>,
}

impl PresetSimulator {
    pub fn new(preset: Preset) -> Result<Self> {
        Self::with_grid(preset, DEFAULT_GRID)
    }

    /// `n` cells per axis for the Gaussian field grid.
    pub fn with_grid(preset: Preset, n: usize) -> Result<Self> {
        let w = preset.window();
        let poisson = match preset {
            Preset::PoissonBernoulli | Preset::Bivariate => {
                // Supremum on the unit window is 5 e^5.5, attained at x = 1, t = 1.
                Some(IntensityField::new(
                    poisson_rate,
                    w.clone(),
                    Some(5.0 * libm::exp(5.5)),
                )?)
            }
            _ => None,
        };
        let grid = Grid::new(w, vec![n, n], n)?;
        let cov = Preset::field_covariance();
        let field = match preset {
            Preset::PoissonBernoulli => None,
            Preset::LgcpBernoulli => {
                Some(GrfSampler::new(&lgcp_mean(0.5, -SIGMA2 / 2.0), &cov, grid)?)
            }
            Preset::Bivariate => Some(GrfSampler::new(&lgcp_mean(1.5, -SIGMA2 / 2.0), &cov, grid)?),
            Preset::LgcpGeostat => {
                Some(GrfSampler::new(&lgcp_mean(0.5, SIGMA2 / 2.0), &cov, grid)?)
            }
        };
        Ok(Self {
            preset,
            poisson,
            field,
        })
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn simulate(&self, seed: u64) -> Result<MarkedPattern> {
        let s = |k| derive_seed(seed, k);
        let ms = self.preset.mark_space();
        match self.preset {
            Preset::PoissonBernoulli => {
                let g = sim_poisson(self.poisson.as_ref().unwrap(), s(0))?;
                assign_marks_iid(g, &MarkLaw::Bernoulli(BERNOULLI_P), ms, s(1))
            }
            Preset::LgcpBernoulli => {
                let f = self.field.as_ref().unwrap().sample(s(0));
                let g = lgcp_from_field(&f, s(1))?;
                assign_marks_iid(g, &MarkLaw::Bernoulli(BERNOULLI_P), ms, s(2))
            }
            Preset::Bivariate => {
                let y1 = sim_poisson(self.poisson.as_ref().unwrap(), s(0))?;
                let f = self.field.as_ref().unwrap().sample(s(1));
                let y2 = lgcp_from_field(&f, s(2))?;
                superpose(&[y1, y2], ms)
            }
            Preset::LgcpGeostat => {
                let f = self.field.as_ref().unwrap().sample(s(0));
                let g = lgcp_from_field(&f, s(1))?;
                assign_marks_geostat(g, &Preset::mark_covariance(), ms, s(2))
            }
        }
    }
}
