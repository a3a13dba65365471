//! Synthetic staggered-adoption panels with known group-time effects.
//!
//! Untreated outcomes follow
//! `Y_it(0) = η_i + t·(trend + X_i'γ) + ε_it`, so trends may depend on
//! covariates but never on the cohort: conditional parallel trends hold in
//! every period unless a violation is injected. Cohort membership is a
//! multinomial logit in `X` against the never-treated group, which makes
//! each generalized propensity score an exact binary logit.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{CellIndex, CellKind, Cohort, Panel, PanelInput, UnitRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateLaw {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl CovariateLaw {
    fn mean(self) -> f64 {
        match self {
            CovariateLaw::Uniform { low, high } => 0.5 * (low + high),
            CovariateLaw::Normal { mean, .. } => mean,
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            CovariateLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            CovariateLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

/// Selection equation of one cohort relative to the never-treated group.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDesign {
    pub g: u32,
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

/// True `ATT(g, t)` for post-treatment cells.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectDesign {
    Constant(f64),
    /// `base + slope · e` with `e = t - g + 1`.
    Exposure { base: f64, slope: f64 },
    /// Explicit per-cell effects; unlisted post cells get zero.
    Table(Vec<(CellIndex, f64)>),
}

impl EffectDesign {
    pub fn effect(&self, cell: CellIndex) -> f64 {
        match self {
            EffectDesign::Constant(c) => *c,
            EffectDesign::Exposure { base, slope } => base + slope * cell.exposure() as f64,
            EffectDesign::Table(rows) => rows
                .iter()
                .find(|(c, _)| *c == cell)
                .map(|r| r.1)
                .unwrap_or(0.0),
        }
    }
}

/// Pre-treatment drift added to treated cohorts in periods `2..g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    None,
    /// Drift of the given size for every treated unit.
    UnconditionalPretrend(f64),
    /// Drift `size · x_last`, mean zero within each cohort. Requires every
    /// cohort's selection slope on the last covariate to be zero and a
    /// mean-zero law for it, so placebo effects stay exactly zero.
    ConditionalOffsetting(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub cohorts: Vec<CohortDesign>,
    pub n_covariates: usize,
    pub covariate_law: CovariateLaw,
    pub time_trend: f64,
    /// `γ`: per-covariate slope of the time trend.
    pub covariate_trends: Vec<f64>,
    pub unit_effect_scale: f64,
    pub noise_scale: f64,
    pub effect: EffectDesign,
    pub violation: Violation,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n_units: 1000,
            n_periods: 4,
            cohorts: (2..=4)
                .map(|g| CohortDesign {
                    g,
                    intercept: 0.0,
                    slopes: vec![1.0, 0.0],
                })
                .collect(),
            n_covariates: 2,
            covariate_law: CovariateLaw::Uniform {
                low: -1.0,
                high: 1.0,
            },
            time_trend: 1.0,
            covariate_trends: vec![1.0, 0.0],
            unit_effect_scale: 1.0,
            noise_scale: 1.0,
            effect: EffectDesign::Constant(1.0),
            violation: Violation::None,
            seed: 0,
        }
    }
}

impl DgpSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument(m));
        if self.n_periods < 2 {
            return bad(format!("need at least two periods, got {}", self.n_periods));
        }
        if self.cohorts.is_empty() {
            return bad("no treated cohorts".to_string());
        }
        if self.covariate_trends.len() != self.n_covariates {
            return bad(format!(
                "{} covariate trends for {} covariates",
                self.covariate_trends.len(),
                self.n_covariates
            ));
        }
        for (j, c) in self.cohorts.iter().enumerate() {
            if c.g < 2 || c.g as usize > self.n_periods {
                return bad(format!("cohort {} outside 2..={}", c.g, self.n_periods));
            }
            if self.cohorts[..j].iter().any(|d| d.g == c.g) {
                return bad(format!("cohort {} listed twice", c.g));
            }
            if c.slopes.len() != self.n_covariates {
                return bad(format!("cohort {} has {} slopes", c.g, c.slopes.len()));
            }
        }
        if let Violation::ConditionalOffsetting(_) = self.violation {
            if self.n_covariates == 0 {
                return bad("offsetting violation needs a covariate".to_string());
            }
            let last = self.n_covariates - 1;
            if self.cohorts.iter().any(|c| c.slopes[last] != 0.0) {
                return bad("offsetting violation needs zero selection on the last covariate".to_string());
            }
            if self.covariate_law.mean() != 0.0 {
                return bad("offsetting violation needs a mean-zero covariate law".to_string());
            }
        }
        Ok(())
    }

    fn drift(&self, x: &[f64]) -> f64 {
        match self.violation {
            Violation::None => 0.0,
            Violation::UnconditionalPretrend(size) => size,
            Violation::ConditionalOffsetting(size) => size * x[self.n_covariates - 1],
        }
    }

    /// Population value of every estimable cell, in grid order, for the
    /// design's cohorts.
    pub fn truth(&self, include_placebo: bool) -> Vec<(CellIndex, f64)> {
        let mut gs: Vec<u32> = self.cohorts.iter().map(|c| c.g).collect();
        gs.sort_unstable();
        let mut out = Vec::new();
        for g in gs {
            for t in 2..=self.n_periods as u32 {
                let cell = CellIndex::new(g, t);
                match cell.kind() {
                    CellKind::Post => out.push((cell, self.effect.effect(cell))),
                    CellKind::Placebo if include_placebo => {
                        let v = match self.violation {
                            Violation::UnconditionalPretrend(s) => s,
                            _ => 0.0,
                        };
                        out.push((cell, v));
                    }
                    CellKind::Placebo => {}
                }
            }
        }
        out
    }
}

/// A generated panel together with its population cell values.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub panel: Panel,
    pub truth: Vec<(CellIndex, f64)>,
}

impl Simulated {
    pub fn true_value(&self, cell: CellIndex) -> Option<f64> {
        self.truth.iter().find(|(c, _)| *c == cell).map(|r| r.1)
    }
}

/// Mixes a master seed with a replication index (splitmix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MAX_ATTEMPTS: u64 = 100;

pub fn generate(spec: &DgpSpec) -> Result<Simulated> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt);
        let input = draw_panel(spec, &mut rng);
        let realized: Vec<u32> = spec
            .cohorts
            .iter()
            .map(|c| c.g)
            .filter(|&g| input.units.iter().any(|u| u.cohort == Cohort::FirstTreated(g)))
            .collect();
        let has_control = input.units.iter().any(|u| u.cohort.is_never());
        if realized.len() != spec.cohorts.len() || !has_control {
            continue;
        }
        match Panel::new(input) {
            Ok(panel) => {
                return Ok(Simulated {
                    truth: spec.truth(true),
                    panel,
                })
            }
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InfeasibleDesign(format!(
        "no panel with every cohort and the control group non-empty after {MAX_ATTEMPTS} attempts"
    )))
}

fn draw_panel(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> PanelInput {
    let tt = spec.n_periods;
    let k = spec.n_covariates;
    let mut units = Vec::with_capacity(spec.n_units);
    let mut scores = vec![0.0; spec.cohorts.len() + 1];
    for i in 0..spec.n_units {
        let x: Vec<f64> = (0..k).map(|_| spec.covariate_law.sample(rng)).collect();

        // multinomial logit with the never-treated group as base category
        scores[0] = 1.0;
        for (j, c) in spec.cohorts.iter().enumerate() {
            let s = c.intercept + c.slopes.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>();
            scores[j + 1] = libm::exp(s);
        }
        let total: f64 = scores.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = scores.len() - 1;
        for (j, s) in scores.iter().enumerate() {
            if u < *s {
                pick = j;
                break;
            }
            u -= s;
        }
        let cohort = if pick == 0 {
            Cohort::Never
        } else {
            Cohort::FirstTreated(spec.cohorts[pick - 1].g)
        };

        let z: f64 = StandardNormal.sample(rng);
        let eta = spec.unit_effect_scale * z + x.iter().sum::<f64>();
        let slope = spec.time_trend
            + spec
                .covariate_trends
                .iter()
                .zip(&x)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        let drift = match cohort {
            Cohort::FirstTreated(_) => spec.drift(&x),
            Cohort::Never => 0.0,
        };
        let outcomes = (1..=tt as u32)
            .map(|t| {
                let e: f64 = StandardNormal.sample(rng);
                let mut y = eta + slope * t as f64 + spec.noise_scale * e;
                if let Cohort::FirstTreated(g) = cohort {
                    y += drift * t.min(g - 1) as f64;
                    if t >= g {
                        y += spec.effect.effect(CellIndex::new(g, t));
                    }
                }
                y
            })
            .collect();
        units.push(UnitRecord {
            id: (i + 1).to_string(),
            cohort,
            cluster: None,
            outcomes,
            covariates: x,
        });
    }
    PanelInput {
        period_labels: (1..=tt as i64).collect(),
        covariate_names: (1..=k).map(|j| format!("x{j}")).collect(),
        units,
    }
}
