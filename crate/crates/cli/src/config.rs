//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cohortdid_core::aggregate::AggScheme;
use cohortdid_core::attgt::{AttOptions, OverlapPolicy};
use cohortdid_core::dgp::{CohortDesign, CovariateLaw, DgpSpec, EffectDesign, Violation};
use cohortdid_core::mboot::{MultiplierLaw, MultiplierSpec};
use cohortdid_core::propensity::{FitOptions, Link};
use cohortdid_core::CellIndex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Long-format panel CSV; relative paths resolve against the config file.
    pub input: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default)]
    pub mode: Mode,
    /// Covariate columns. When absent every column outside the schema is used.
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub link: LinkName,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub aggregate: AggregateConfig,
    #[serde(default)]
    pub pretest: PretestConfig,
    #[serde(default = "yes")]
    pub plot: bool,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    /// First-treatment period label; `0` or blank marks never-treated units.
    pub group: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "y".into(),
            group: "group".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Conditional,
    /// Intercept-only propensity scores.
    Unconditional,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LinkName {
    #[default]
    Logit,
    Probit,
}

impl From<LinkName> for Link {
    fn from(l: LinkName) -> Link {
        match l {
            LinkName::Logit => Link::Logit,
            LinkName::Probit => Link::Probit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub include_placebo: bool,
    /// Fitted scores above this are reported as overlap violations.
    pub trim: f64,
    pub overlap_error: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            include_placebo: true,
            trim: 0.999,
            overlap_error: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    #[default]
    Mammen,
    Rademacher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub law: LawName,
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Column holding cluster labels; multipliers are drawn per cluster.
    pub cluster: Option<String>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            law: LawName::Mammen,
            draws: 999,
            seed: 0,
            alpha: 0.05,
            cluster: None,
        }
    }
}

impl BootstrapConfig {
    pub fn spec(&self) -> MultiplierSpec {
        MultiplierSpec {
            law: match self.law {
                LawName::Mammen => MultiplierLaw::Mammen,
                LawName::Rademacher => MultiplierLaw::Rademacher,
            },
            draws: self.draws,
            seed: self.seed,
            cluster: self.cluster.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    SimpleAvg,
    WeightedAvg,
    Selective,
    Dynamic,
    Calendar,
    SelectivityDynamics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateConfig {
    pub schemes: Vec<SchemeName>,
    /// Exposure floor for `selectivity_dynamics`; defaults to 1.
    pub e_prime: Option<u32>,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig {
            schemes: vec![
                SchemeName::SimpleAvg,
                SchemeName::WeightedAvg,
                SchemeName::Selective,
                SchemeName::Dynamic,
                SchemeName::Calendar,
            ],
            e_prime: None,
        }
    }
}

impl AggregateConfig {
    pub fn schemes(&self) -> Vec<AggScheme> {
        self.schemes
            .iter()
            .map(|s| match s {
                SchemeName::SimpleAvg => AggScheme::SimpleAvg,
                SchemeName::WeightedAvg => AggScheme::WeightedAvg,
                SchemeName::Selective => AggScheme::Selective,
                SchemeName::Dynamic => AggScheme::Dynamic,
                SchemeName::Calendar => AggScheme::Calendar,
                SchemeName::SelectivityDynamics => AggScheme::SelectivityDynamics {
                    e_prime: self.e_prime.unwrap_or(1),
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretestConfig {
    pub cvm: bool,
    pub wald: bool,
}

impl Default for PretestConfig {
    fn default() -> Self {
        PretestConfig { cvm: true, wald: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub g: u32,
    #[serde(default)]
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellEffect {
    pub g: u32,
    pub t: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectConfig {
    Constant { value: f64 },
    Exposure { base: f64, slope: f64 },
    Table { cells: Vec<CellEffect> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViolationConfig {
    None,
    UnconditionalPretrend { size: f64 },
    ConditionalOffsetting { size: f64 },
}

/// Simulation design. Cohorts and periods are 1-based period indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub n_covariates: usize,
    pub cohorts: Vec<CohortConfig>,
    pub covariate_law: LawConfig,
    pub time_trend: f64,
    pub covariate_trends: Vec<f64>,
    pub unit_effect_scale: f64,
    pub noise_scale: f64,
    pub effect: EffectConfig,
    pub violation: ViolationConfig,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig::from_spec(&DgpSpec::default())
    }
}

impl DgpConfig {
    pub fn from_spec(s: &DgpSpec) -> Self {
        DgpConfig {
            n_units: s.n_units,
            n_periods: s.n_periods,
            n_covariates: s.n_covariates,
            cohorts: s
                .cohorts
                .iter()
                .map(|c| CohortConfig {
                    g: c.g,
                    intercept: c.intercept,
                    slopes: c.slopes.clone(),
                })
                .collect(),
            covariate_law: match s.covariate_law {
                CovariateLaw::Uniform { low, high } => LawConfig::Uniform { low, high },
                CovariateLaw::Normal { mean, sd } => LawConfig::Normal { mean, sd },
            },
            time_trend: s.time_trend,
            covariate_trends: s.covariate_trends.clone(),
            unit_effect_scale: s.unit_effect_scale,
            noise_scale: s.noise_scale,
            effect: match &s.effect {
                EffectDesign::Constant(value) => EffectConfig::Constant { value: *value },
                EffectDesign::Exposure { base, slope } => EffectConfig::Exposure {
                    base: *base,
                    slope: *slope,
                },
                EffectDesign::Table(rows) => EffectConfig::Table {
                    cells: rows
                        .iter()
                        .map(|(c, v)| CellEffect { g: c.g, t: c.t, value: *v })
                        .collect(),
                },
            },
            violation: match s.violation {
                Violation::None => ViolationConfig::None,
                Violation::UnconditionalPretrend(size) => ViolationConfig::UnconditionalPretrend { size },
                Violation::ConditionalOffsetting(size) => ViolationConfig::ConditionalOffsetting { size },
            },
            seed: s.seed,
        }
    }

    pub fn spec(&self) -> DgpSpec {
        DgpSpec {
            n_units: self.n_units,
            n_periods: self.n_periods,
            cohorts: self
                .cohorts
                .iter()
                .map(|c| CohortDesign {
                    g: c.g,
                    intercept: c.intercept,
                    slopes: c.slopes.clone(),
                })
                .collect(),
            n_covariates: self.n_covariates,
            covariate_law: match self.covariate_law {
                LawConfig::Uniform { low, high } => CovariateLaw::Uniform { low, high },
                LawConfig::Normal { mean, sd } => CovariateLaw::Normal { mean, sd },
            },
            time_trend: self.time_trend,
            covariate_trends: self.covariate_trends.clone(),
            unit_effect_scale: self.unit_effect_scale,
            noise_scale: self.noise_scale,
            effect: match &self.effect {
                EffectConfig::Constant { value } => EffectDesign::Constant(*value),
                EffectConfig::Exposure { base, slope } => EffectDesign::Exposure {
                    base: *base,
                    slope: *slope,
                },
                EffectConfig::Table { cells } => {
                    EffectDesign::Table(cells.iter().map(|c| (CellIndex::new(c.g, c.t), c.value)).collect())
                }
            },
            violation: match self.violation {
                ViolationConfig::None => Violation::None,
                ViolationConfig::UnconditionalPretrend { size } => Violation::UnconditionalPretrend(size),
                ViolationConfig::ConditionalOffsetting { size } => Violation::ConditionalOffsetting(size),
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub replications: usize,
    /// Master seed; replication `r` uses a seed split from it.
    pub seed: u64,
    pub band: bool,
    pub cvm: bool,
    pub wald: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            replications: 100,
            seed: 0,
            band: true,
            cvm: false,
            wald: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.input {
            if input.is_relative() {
                cfg.input = Some(base.join(input));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.bootstrap.alpha;
        if !(alpha > 0.0 && alpha < 1.0) {
            bail!("bootstrap.alpha must lie in (0, 1), got {alpha}");
        }
        if self.bootstrap.draws == 0 {
            bail!("bootstrap.draws must be at least 1");
        }
        let trim = self.estimation.trim;
        if !(trim > 0.0 && trim < 1.0) {
            bail!("estimation.trim must lie in (0, 1), got {trim}");
        }
        if self.mode == Mode::Unconditional && self.covariates.as_ref().is_some_and(|c| !c.is_empty()) {
            bail!("unconditional mode takes no covariates");
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().context("config has no input path")
    }

    pub fn att_options(&self) -> AttOptions {
        AttOptions {
            include_placebo: self.estimation.include_placebo,
            fit: FitOptions {
                link: self.link.into(),
                ..Default::default()
            },
            trim: self.estimation.trim,
            overlap: if self.estimation.overlap_error {
                OverlapPolicy::Error
            } else {
                OverlapPolicy::Warn
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_dgp_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.bootstrap.draws, 999);
        assert_eq!(cfg.schema.group, "group");
        assert_eq!(cfg.dgp.spec(), DgpSpec::default());
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.dgp.spec(), cfg.dgp.spec());
    }

    #[test]
    fn parses_sections() {
        let cfg: RunConfig = toml::from_str(
            r#"
            input = "data.csv"
            mode = "unconditional"
            [bootstrap]
            draws = 199
            law = "rademacher"
            cluster = "state"
            [aggregate]
            schemes = ["dynamic", "selectivity_dynamics"]
            e_prime = 2
            [dgp.effect]
            kind = "exposure"
            base = 0.0
            slope = 1.0
            [dgp.violation]
            kind = "conditional_offsetting"
            size = 0.5
            "#,
        )
        .unwrap();
        assert!(cfg.bootstrap.spec().cluster);
        assert_eq!(
            cfg.aggregate.schemes(),
            vec![AggScheme::Dynamic, AggScheme::SelectivityDynamics { e_prime: 2 }]
        );
        assert_eq!(cfg.dgp.spec().violation, Violation::ConditionalOffsetting(0.5));
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
